#include "ifcvm/cfg.hpp"

#include <algorithm>
#include <functional>

namespace ifcvm {

namespace {

void addEdge(Cfg& cfg, NodeId from, NodeId to) {
    auto& edges = cfg.succ[from];
    if (std::find(edges.begin(), edges.end(), to) == edges.end())
        edges.push_back(to);
}

} // namespace

Cfg buildCfg(const CodeBlock& block, bool handlerOnStack) {
    const int n = static_cast<int>(block.instructions.size());
    Cfg cfg;
    cfg.instructionCount = n;
    cfg.handlerVariant = handlerOnStack;
    int total = n + (handlerOnStack ? 1 : 0) + 1;
    if (handlerOnStack)
        cfg.sen = n;
    cfg.sink = total - 1;
    cfg.succ.resize(total);
    cfg.leftSucc.assign(total, kNoNode);
    cfg.rightSucc.assign(total, kNoNode);

    auto handlerFor = [&](int index) -> NodeId {
        for (const ExceptionRange& range : block.exceptionTable)
            if (index >= range.start && index < range.end)
                return range.handler;
        return kNoNode;
    };

    for (int i = 0; i < n; ++i) {
        const Instruction& ins = block.instructions[i];
        NodeId fallthrough = i + 1;
        switch (ins.opcode) {
        case Opcode::Jmp:
            addEdge(cfg, i, static_cast<NodeId>(ins.operands[0].num));
            break;
        case Opcode::JmpScope:
            addEdge(cfg, i, static_cast<NodeId>(ins.operands[1].num));
            break;
        case Opcode::JFalse:
            cfg.leftSucc[i] = static_cast<NodeId>(ins.operands[1].num);
            cfg.rightSucc[i] = fallthrough;
            addEdge(cfg, i, cfg.leftSucc[i]);
            addEdge(cfg, i, cfg.rightSucc[i]);
            break;
        case Opcode::LoopIfLess:
            cfg.leftSucc[i] = static_cast<NodeId>(ins.operands[2].num);
            cfg.rightSucc[i] = fallthrough;
            addEdge(cfg, i, cfg.leftSucc[i]);
            addEdge(cfg, i, cfg.rightSucc[i]);
            break;
        case Opcode::GetPnames:
            // Break edge taken when the base is undefined/null.
            cfg.leftSucc[i] = static_cast<NodeId>(ins.operands[4].num);
            cfg.rightSucc[i] = fallthrough;
            addEdge(cfg, i, cfg.rightSucc[i]);
            addEdge(cfg, i, cfg.leftSucc[i]);
            break;
        case Opcode::NextPname:
            // Taken edge when another name exists; fallthrough when exhausted.
            cfg.leftSucc[i] = static_cast<NodeId>(ins.operands[5].num);
            cfg.rightSucc[i] = fallthrough;
            addEdge(cfg, i, cfg.leftSucc[i]);
            addEdge(cfg, i, cfg.rightSucc[i]);
            break;
        case Opcode::Ret:
            addEdge(cfg, i, handlerOnStack ? cfg.sen : cfg.sink);
            break;
        case Opcode::End:
            addEdge(cfg, i, cfg.sink);
            break;
        case Opcode::Throw:
            break; // exception edges only, added below
        default:
            if (fallthrough < n)
                addEdge(cfg, i, fallthrough);
            else
                throw CfgError("instruction " + std::to_string(i) + " falls off the block");
            break;
        }

        if (opcodeMayThrow(ins.opcode)) {
            NodeId handler = handlerFor(i);
            if (handler != kNoNode)
                addEdge(cfg, i, handler);
            else if (handlerOnStack)
                addEdge(cfg, i, cfg.sen);
            else if (ins.opcode == Opcode::Throw)
                addEdge(cfg, i, cfg.sink); // instant termination
        }
        if (ins.opcode == Opcode::Throw && cfg.succ[i].empty())
            addEdge(cfg, i, handlerOnStack ? cfg.sen : cfg.sink);
    }

    if (handlerOnStack)
        addEdge(cfg, cfg.sen, cfg.sink);

    cfg.ipd = computeIpds(cfg);
    return cfg;
}

std::vector<NodeId> computeIpds(const Cfg& cfg) {
    const int n = cfg.nodeCount();
    // Reversed graph rooted at the sink.
    std::vector<std::vector<NodeId>> pred(n);
    for (NodeId u = 0; u < n; ++u)
        for (NodeId v : cfg.succ[u])
            pred[v].push_back(u);

    // Lengauer-Tarjan (simple eval/link) on the reversed graph. "parent",
    // "semi" etc. follow the classic presentation; vertices are numbered by
    // DFS order from the root.
    std::vector<int> dfnum(n, -1), vertex(n, -1), parent(n, -1);
    std::vector<int> semi(n), idom(n, -1), ancestor(n, -1), best(n);
    std::vector<std::vector<int>> bucket(n);

    int count = 0;
    // Iterative DFS over reversed edges.
    std::vector<std::pair<NodeId, size_t>> stack;
    dfnum[cfg.sink] = count;
    vertex[count] = cfg.sink;
    ++count;
    stack.push_back({cfg.sink, 0});
    while (!stack.empty()) {
        auto& [u, idx] = stack.back();
        if (idx < pred[u].size()) {
            NodeId v = pred[u][idx++];
            if (dfnum[v] == -1) {
                dfnum[v] = count;
                vertex[count] = v;
                parent[v] = u;
                ++count;
                stack.push_back({v, 0});
            }
        } else {
            stack.pop_back();
        }
    }

    {
        std::string missing;
        for (NodeId u = 0; u < n; ++u)
            if (dfnum[u] == -1)
                missing += (missing.empty() ? "" : ", ") + std::to_string(u);
        if (!missing.empty())
            throw CfgError("nodes cannot reach the exit: " + missing);
    }

    for (int i = 0; i < n; ++i) {
        semi[i] = dfnum[i];
        best[i] = i;
    }

    std::function<int(int)> evalCompress = [&](int v) -> int {
        if (ancestor[v] == -1)
            return v;
        // Path compression, iterative to bound stack depth.
        std::vector<int> path;
        int u = v;
        while (ancestor[ancestor[u]] != -1) {
            path.push_back(u);
            u = ancestor[u];
        }
        for (auto it = path.rbegin(); it != path.rend(); ++it) {
            int w = *it;
            if (semi[best[ancestor[w]]] < semi[best[w]])
                best[w] = best[ancestor[w]];
            ancestor[w] = ancestor[ancestor[w]];
        }
        return best[v];
    };

    for (int i = count - 1; i >= 1; --i) {
        int w = vertex[i];
        for (NodeId v : cfg.succ[w]) { // predecessors of w in reversed graph
            if (dfnum[v] == -1)
                continue;
            int u = evalCompress(v);
            if (semi[u] < semi[w])
                semi[w] = semi[u];
        }
        bucket[vertex[semi[w]]].push_back(w);
        ancestor[w] = parent[w];
        best[w] = w;

        for (int v : bucket[parent[w]]) {
            int u = evalCompress(v);
            idom[v] = semi[u] < semi[v] ? u : parent[w];
        }
        bucket[parent[w]].clear();
    }

    for (int i = 1; i < count; ++i) {
        int w = vertex[i];
        if (idom[w] != vertex[semi[w]])
            idom[w] = idom[idom[w]];
    }

    std::vector<NodeId> result(n, kNoNode);
    for (NodeId u = 0; u < n; ++u)
        if (u != cfg.sink)
            result[u] = idom[u] == -1 ? cfg.sink : idom[u];
    result[cfg.sink] = kNoNode;
    return result;
}

std::vector<std::vector<bool>> bruteForcePostDominators(const Cfg& cfg) {
    const int n = cfg.nodeCount();
    std::vector<std::vector<bool>> pdom(n, std::vector<bool>(n, true));
    std::fill(pdom[cfg.sink].begin(), pdom[cfg.sink].end(), false);
    pdom[cfg.sink][cfg.sink] = true;

    bool changed = true;
    while (changed) {
        changed = false;
        for (NodeId u = 0; u < n; ++u) {
            if (u == cfg.sink)
                continue;
            std::vector<bool> next(n, !cfg.succ[u].empty());
            for (NodeId s : cfg.succ[u])
                for (int k = 0; k < n; ++k)
                    next[k] = next[k] && pdom[s][k];
            next[u] = true;
            if (next != pdom[u]) {
                pdom[u] = std::move(next);
                changed = true;
            }
        }
    }
    return pdom;
}

std::vector<NodeId> ipdsFromPostDominatorSets(const std::vector<std::vector<bool>>& pdom) {
    const int n = static_cast<int>(pdom.size());
    auto setSize = [&](int v) {
        int size = 0;
        for (bool b : pdom[v])
            size += b;
        return size;
    };
    std::vector<NodeId> ipd(n, kNoNode);
    for (int u = 0; u < n; ++u) {
        NodeId bestNode = kNoNode;
        int bestSize = -1;
        for (int v = 0; v < n; ++v) {
            if (v == u || !pdom[u][v])
                continue;
            int size = setSize(v);
            if (size > bestSize) {
                bestSize = size;
                bestNode = v;
            }
        }
        ipd[u] = bestNode;
    }
    return ipd;
}

std::string dumpCfg(const Cfg& cfg, const CodeBlock& block, bool dot) {
    auto nodeName = [&](NodeId id) -> std::string {
        if (cfg.isSen(id))
            return "SEN";
        if (cfg.isSink(id))
            return "SINK";
        return std::to_string(id) + ":" +
               std::string(opcodeName(block.instructions[id].opcode));
    };

    std::string out;
    if (dot) {
        out += "digraph \"" + block.name + "\" {\n";
        for (NodeId u = 0; u < cfg.nodeCount(); ++u)
            out += "  \"" + nodeName(u) + "\";\n";
        for (NodeId u = 0; u < cfg.nodeCount(); ++u)
            for (NodeId v : cfg.succ[u])
                out += "  \"" + nodeName(u) + "\" -> \"" + nodeName(v) + "\";\n";
        out += "}\n";
        return out;
    }

    out += "cfg " + block.name + " variant=" +
           (cfg.handlerVariant ? std::string("handler") : std::string("plain")) + "\n";
    for (NodeId u = 0; u < cfg.nodeCount(); ++u) {
        out += "  " + nodeName(u) + " ->";
        for (NodeId v : cfg.succ[u])
            out += " " + nodeName(v);
        if (cfg.succ[u].empty())
            out += " (none)";
        out += "\n";
    }
    out += "ipd table\n";
    for (NodeId u = 0; u < cfg.nodeCount(); ++u) {
        if (u == cfg.sink)
            continue;
        out += "  " + nodeName(u) + " => " + nodeName(cfg.ipd[u]) + "\n";
    }
    return out;
}

} // namespace ifcvm
