#pragma once

#include "ifcvm/bytecode.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ifcvm {

using NodeId = int;
constexpr NodeId kNoNode = -1;

// Intra-procedural CFG for one code block. Nodes [0, instructionCount) are
// the instructions; when built with handlerOnStack the synthetic exit node
// (SEN) follows them; the virtual sink is always the last node, joining ret,
// end and the SEN so post-dominance is defined for every node.
class Cfg {
public:
    int instructionCount = 0;
    NodeId sen = kNoNode;
    NodeId sink = kNoNode;
    bool handlerVariant = false;
    std::vector<std::vector<NodeId>> succ;
    // Taken/fallthrough successors of conditional branches (jfalse,
    // loop-if-less, get-pnames, next-pname).
    std::vector<NodeId> leftSucc;
    std::vector<NodeId> rightSucc;
    std::vector<NodeId> ipd;

    int nodeCount() const { return static_cast<int>(succ.size()); }
    bool isSen(NodeId n) const { return sen != kNoNode && n == sen; }
    bool isSink(NodeId n) const { return n == sink; }

    // Unique successor of a non-branching node.
    NodeId next(NodeId n) const { return succ[n].size() == 1 ? succ[n][0] : kNoNode; }
    NodeId left(NodeId n) const { return leftSucc[n]; }
    NodeId right(NodeId n) const { return rightSucc[n]; }
};

struct CfgError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Builds the CFG variant for `handlerOnStack`. Straight-line edges follow
// instruction order; branch edges follow offsets; instructions covered by an
// exception-table range get an edge to their handler in both variants;
// potentially-throwing instructions not covered in-function get an edge to
// the SEN only in the handler variant. IPDs are filled in via computeIpds.
Cfg buildCfg(const CodeBlock& block, bool handlerOnStack);

// Immediate post-dominators: immediate dominators of the edge-reversed graph
// rooted at the virtual sink (Lengauer-Tarjan). Throws CfgError naming any
// node that cannot reach the sink.
std::vector<NodeId> computeIpds(const Cfg& cfg);

// Independent oracle: full post-dominator sets by iterative dataflow,
// pdom(n) = {n} ∪ ⋂ pdom(succ). Used by tests to cross-check computeIpds.
std::vector<std::vector<bool>> bruteForcePostDominators(const Cfg& cfg);

// Extracts immediate post-dominators from the oracle's sets: the closest
// strict post-dominator (the one with the largest pdom set).
std::vector<NodeId> ipdsFromPostDominatorSets(const std::vector<std::vector<bool>>& pdom);

// Plain-text adjacency dump plus the IPD table; `dot` selects Graphviz
// output instead.
std::string dumpCfg(const Cfg& cfg, const CodeBlock& block, bool dot = false);

} // namespace ifcvm
