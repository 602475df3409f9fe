#include "ifcvm/ni.hpp"

#include "ifcvm/assembler.hpp"
#include "ifcvm/minijs.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace ifcvm {

bool Bijection::pair(Location a, Location b) {
    auto fwd = forward_.find(a);
    if (fwd != forward_.end())
        return fwd->second == b;
    auto bwd = backward_.find(b);
    if (bwd != backward_.end())
        return bwd->second == a;
    forward_[a] = b;
    backward_[b] = a;
    return true;
}

bool Bijection::contains(Location a, Location b) const {
    auto it = forward_.find(a);
    return it != forward_.end() && it->second == b;
}

std::optional<Location> Bijection::forward(Location a) const {
    auto it = forward_.find(a);
    if (it == forward_.end())
        return std::nullopt;
    return it->second;
}

std::optional<Location> Bijection::backward(Location b) const {
    auto it = backward_.find(b);
    if (it == backward_.end())
        return std::nullopt;
    return it->second;
}

EquivChecker::EquivChecker(const Machine& m1, const Machine& m2, Label observer)
    : m1_(m1), m2_(m2), observer_(observer) {}

bool EquivChecker::fail(const std::string& path, const std::string& why) {
    if (diagnostic_.empty())
        diagnostic_ = path + ": " + why;
    return false;
}

// Labeled-value equivalence (Def. 3), generalized to an arbitrary observer:
// (1) star on either side, (2) both labels unobservable, (3) labels equal,
// observable, and values equal up to the bijection (Def. 2).
bool EquivChecker::equivValues(const LabeledValue& v1, const LabeledValue& v2,
                               const std::string& path) {
    if (v1.label.star() || v2.label.star())
        return true;
    bool vis1 = visible(v1.label), vis2 = visible(v2.label);
    if (!vis1 && !vis2)
        return true;
    if (vis1 != vis2)
        return fail(path, "observable on one side only");
    if (!(v1.label == v2.label))
        return fail(path, "observable labels differ");

    const Value& a = v1.value;
    const Value& b = v2.value;
    if (a.index() != b.index())
        return fail(path, "value kinds differ");
    if (isLocation(a))
        return equivLocations(std::get<Location>(a), std::get<Location>(b), path);
    if (auto* pa = std::get_if<PropIter>(&a)) {
        auto* pb = std::get_if<PropIter>(&b);
        if (!pa->names || !pb->names || *pa->names != *pb->names)
            return fail(path, "property iterators differ");
        return equivLocations(pa->base, pb->base, path + ".iterbase");
    }
    if (!(a == b))
        return fail(path, "primitive values differ");
    return true;
}

bool EquivChecker::equivLocations(Location a, Location b, const std::string& path) {
    if (beta_.contains(a, b))
        return true;
    if (beta_.forward(a) || beta_.backward(b))
        return fail(path, "bijection conflict at @" + std::to_string(a) + "/@" +
                              std::to_string(b));
    if (!beta_.pair(a, b))
        return fail(path, "bijection conflict");
    return equivObjects(a, b, path);
}

// Object equivalence (Def. 4). Activations are compared as variable
// environments (Def. 5 clause (2)): pairwise slot values.
bool EquivChecker::equivObjects(Location a, Location b, const std::string& path) {
    const ObjectRecord& o1 = m1_.heap().at(a);
    const ObjectRecord& o2 = m2_.heap().at(b);
    if (o1.activation != o2.activation)
        return fail(path, "activation paired with an ordinary object");
    if (o1.activation) {
        if (o1.properties().size() != o2.properties().size())
            return fail(path, "environment sizes differ");
        for (size_t i = 0; i < o1.properties().size(); ++i) {
            if (o1.properties()[i].first != o2.properties()[i].first)
                return fail(path, "environment slot names differ");
            if (!equivValues(o1.properties()[i].second.value,
                             o2.properties()[i].second.value,
                             path + "." + o1.properties()[i].first))
                return false;
        }
        return true;
    }

    bool vis1 = visible(o1.structLabel), vis2 = visible(o2.structLabel);
    if (!vis1 && !vis2)
        return true; // both structures secret: equivalent regardless of content
    if (vis1 != vis2 || !(o1.structLabel == o2.structLabel))
        return fail(path, "structure labels differ");

    if (o1.properties().size() != o2.properties().size())
        return fail(path, "property lists differ in length");
    for (size_t i = 0; i < o1.properties().size(); ++i) {
        const auto& [n1, d1] = o1.properties()[i];
        const auto& [n2, d2] = o2.properties()[i];
        if (n1 != n2)
            return fail(path, "property name lists differ at index " + std::to_string(i));
        if (d1.isAccessor() != d2.isAccessor())
            return fail(path + "." + n1, "accessor paired with a data property");
        if (d1.isAccessor()) {
            auto side = [&](std::optional<Location> g1, std::optional<Location> g2,
                            const char* what) {
                if (g1.has_value() != g2.has_value())
                    return fail(path + "." + n1, std::string(what) + " present on one side");
                if (g1 && !equivLocations(*g1, *g2, path + "." + n1 + "." + what))
                    return false;
                return true;
            };
            if (!side(d1.accessor->getter, d2.accessor->getter, "getter") ||
                !side(d1.accessor->setter, d2.accessor->setter, "setter"))
                return false;
            if (!(d1.value.label == d2.value.label) &&
                (visible(d1.value.label) || visible(d2.value.label)))
                return fail(path + "." + n1, "accessor labels differ");
        } else if (!equivValues(d1.value, d2.value, path + "." + n1)) {
            return false;
        }
    }

    // Prototype links compare as labeled values (Def. 4 clause 4).
    LabeledValue p1{o1.protoRef ? Value(*o1.protoRef) : Value(Undefined{}), o1.protoLabel};
    LabeledValue p2{o2.protoRef ? Value(*o2.protoRef) : Value(Undefined{}), o2.protoLabel};
    if (!equivValues(p1, p2, path + ".__proto__"))
        return false;

    // Function objects additionally need equal code and equivalent closing
    // contexts.
    if (o1.isFunction() != o2.isFunction())
        return fail(path, "function paired with a non-function");
    if (o1.isFunction()) {
        const CodeBlock& b1 = m1_.program().blocks.at(o1.functionPart->codeBlock);
        const CodeBlock& b2 = m2_.program().blocks.at(o2.functionPart->codeBlock);
        if (o1.functionPart->isHostEval != o2.functionPart->isHostEval)
            return fail(path, "host eval paired with a user function");
        if (!o1.functionPart->isHostEval && !(b1 == b2))
            return fail(path, "function code differs");
        if (!equivScopeChains(o1.functionPart->scope, o2.functionPart->scope,
                              path + ".scope"))
            return false;
    }
    return true;
}

// Scope-chain equivalence (Def. 5): a star link matches anything; a pair of
// unobservable links ends the comparison; observable links need equal labels
// and equivalent nodes.
bool EquivChecker::equivScopeChains(const ScopeChain& s1, const ScopeChain& s2,
                                    const std::string& path) {
    const ScopeNode* n1 = s1.get();
    const ScopeNode* n2 = s2.get();
    int depth = 0;
    for (;;) {
        if (!n1 && !n2)
            return true;
        if (!n1 || !n2) {
            const ScopeNode* present = n1 ? n1 : n2;
            if (present->linkLabel.star() || !visible(present->linkLabel))
                return true;
            return fail(path, "chain lengths differ at an observable link");
        }
        if (n1->linkLabel.star() || n2->linkLabel.star())
            return true;
        bool vis1 = visible(n1->linkLabel), vis2 = visible(n2->linkLabel);
        if (!vis1 && !vis2)
            return true;
        if (vis1 != vis2 || !(n1->linkLabel == n2->linkLabel))
            return fail(path, "link labels differ at depth " + std::to_string(depth));
        if (!equivLocations(n1->object, n2->object,
                            path + "[" + std::to_string(depth) + "]"))
            return false;
        n1 = n1->next.get();
        n2 = n2->next.get();
        ++depth;
    }
}

bool EquivChecker::checkHeaps() {
    return equivLocations(m1_.globalLocation(), m2_.globalLocation(), "global");
}

// pc-stack equivalence (Def. 7): corresponding observable entries are equal
// except for the call-frame field.
bool EquivChecker::equivPcStacks() {
    std::vector<const PcEntry*> low1, low2;
    for (const PcEntry& e : m1_.pcStack())
        if (visible(e.label))
            low1.push_back(&e);
    for (const PcEntry& e : m2_.pcStack())
        if (visible(e.label))
            low2.push_back(&e);
    if (low1.size() != low2.size())
        return fail("pc-stack", "observable entry counts differ");
    for (size_t i = 0; i < low1.size(); ++i) {
        if (!(low1[i]->label == low2[i]->label) || low1[i]->ipdNode != low2[i]->ipdNode ||
            low1[i]->handlerFlag != low2[i]->handlerFlag)
            return fail("pc-stack", "entries differ at index " + std::to_string(i));
    }
    return true;
}

bool EquivChecker::equivFrames(const CallFrame& f1, const CallFrame& f2,
                               const std::string& path) {
    if (f1.registers.size() != f2.registers.size())
        return fail(path, "register counts differ");
    for (size_t i = 0; i < f1.registers.size(); ++i)
        if (!equivValues(m1_.readRegister(f1, static_cast<int>(i)),
                         m2_.readRegister(f2, static_cast<int>(i)),
                         path + ".r" + std::to_string(i)))
            return false;
    if (f1.blockIndex != f2.blockIndex || f1.handlerOnStack != f2.handlerOnStack)
        return fail(path, "code blocks differ");
    if (!equivScopeChains(f1.scope, f2.scope, path + ".scope"))
        return false;
    if (f1.returnAddress != f2.returnAddress)
        return fail(path, "return addresses differ");
    bool visC1 = visible(f1.calleeLabel), visC2 = visible(f2.calleeLabel);
    if (visC1 != visC2)
        return fail(path, "callee labels differ in visibility");
    if (visC1) {
        if (!(f1.calleeLabel == f2.calleeLabel))
            return fail(path, "callee labels differ");
        if (f1.callee.has_value() != f2.callee.has_value())
            return fail(path, "callee present on one side only");
        if (f1.callee && !equivLocations(*f1.callee, *f2.callee, path + ".callee"))
            return false;
    }
    if (f1.argCount != f2.argCount)
        return fail(path, "argument counts differ");
    if (f1.getter != f2.getter)
        return fail(path, "getter flags differ");
    if (f1.dReg != f2.dReg)
        return fail(path, "getter destination registers differ");
    return true;
}

// Call-stack equivalence (Def. 8): compare the prefix up to (and including)
// the frame referenced by the lowest unobservable pc entry; whole stacks
// when the pc is observable. Cross-run frames pair by depth.
bool EquivChecker::equivCallStacks() {
    auto prefixLen = [&](const Machine& m) -> size_t {
        Label pc = m.pcLabel();
        if (m.pcStack().empty() || visible(pc))
            return m.frames().size();
        for (const PcEntry& e : m.pcStack()) {
            if (!visible(e.label)) {
                for (size_t i = 0; i < m.frames().size(); ++i)
                    if (m.frames()[i].id == e.frameId)
                        return i + 1;
                return m.frames().size();
            }
        }
        return m.frames().size();
    };
    size_t len1 = prefixLen(m1_);
    size_t len2 = prefixLen(m2_);
    if (len1 != len2)
        return fail("call-stack", "prefix lengths differ");
    for (size_t i = 0; i < len1; ++i)
        if (!equivFrames(m1_.frames()[i], m2_.frames()[i],
                         "frame[" + std::to_string(i) + "]"))
            return false;
    return true;
}

bool EquivChecker::checkState() {
    if (m1_.frames().empty() != m2_.frames().empty())
        return fail("state", "one machine finished, the other did not");
    if (!m1_.frames().empty()) {
        const CallFrame& f1 = m1_.frames().back();
        const CallFrame& f2 = m2_.frames().back();
        if (f1.blockIndex != f2.blockIndex || f1.currentNode != f2.currentNode)
            return fail("state", "current nodes differ");
    }
    if (!equivPcStacks())
        return false;
    if (!checkHeaps())
        return false;
    return equivCallStacks();
}

namespace {

Machine buildMachine(const NiCase& niCase, bool runB, const NiCheckOptions& options,
                     std::shared_ptr<DomainRegistry> registry) {
    MachineConfig config;
    config.ifcMode = options.mode;
    config.sparse = options.sparse;
    config.checkInvariants = options.checkInvariants;
    Machine machine(niCase.program, config, std::move(registry));
    for (const NiInput& input : niCase.shared)
        machine.setGlobalInput(input.name, input.value);
    for (const NiCase::Secret& secret : niCase.secrets)
        machine.setGlobalInput(secret.name, {runB ? secret.b : secret.a, secret.label});
    return machine;
}

// Advances the machine to its next state whose pc is observable (the next
// entry of the epoch-trace); returns false when the machine stopped.
bool advanceToLowState(Machine& machine, Label observer, uint64_t& budget) {
    for (;;) {
        if (machine.status() != RunStatus::Running)
            return false;
        if (budget == 0)
            return false;
        --budget;
        machine.stepOnce();
        if (machine.status() != RunStatus::Running)
            return false;
        if (machine.pcLabel().visibleTo(observer))
            return true;
    }
}

} // namespace

NiVerdict checkNI(const NiCase& niCase, const NiCheckOptions& options) {
    auto registry = niCase.registry ? niCase.registry : std::make_shared<DomainRegistry>();
    Machine run1 = buildMachine(niCase, false, options, registry);
    Machine run2 = buildMachine(niCase, true, options, registry);

    NiVerdict verdict;
    uint64_t budget1 = options.maxSteps;
    uint64_t budget2 = options.maxSteps;

    if (options.lockstep && options.mode == IfcMode::Deferred) {
        verdict.lockstepChecked = true;
        run1.start();
        run2.start();
        // Initial states form the first epoch entries.
        for (;;) {
            EquivChecker step(run1, run2, niCase.observer);
            if (!step.checkState()) {
                verdict.pass = false;
                verdict.clause = "fail";
                verdict.detail = "lockstep divergence at low step " +
                                 std::to_string(verdict.lowStepsCompared) + ": " +
                                 step.diagnostic();
                verdict.status1 = run1.status();
                verdict.status2 = run2.status();
                return verdict;
            }
            ++verdict.lowStepsCompared;
            bool more1 = advanceToLowState(run1, niCase.observer, budget1);
            bool more2 = advanceToLowState(run2, niCase.observer, budget2);
            if (!more1 || !more2)
                break;
        }
        while (run1.status() == RunStatus::Running && budget1 > 0) {
            --budget1;
            run1.stepOnce();
        }
        while (run2.status() == RunStatus::Running && budget2 > 0) {
            --budget2;
            run2.stepOnce();
        }
    } else {
        run1.run(budget1);
        run2.run(budget2);
    }

    verdict.status1 = run1.status();
    verdict.status2 = run2.status();
    verdict.halt1 = run1.haltReason();
    verdict.halt2 = run2.haltReason();

    if (run1.status() == RunStatus::Running || run2.status() == RunStatus::Running) {
        verdict.pass = true;
        verdict.clause = "nontermination";
        verdict.detail = "at least one run exceeded the step budget";
        return verdict;
    }
    if (run1.status() == RunStatus::Halted || run2.status() == RunStatus::Halted) {
        // Termination-insensitivity: a stopped run satisfies TINI.
        verdict.pass = true;
        verdict.clause = "halt";
        std::string which;
        if (run1.haltReason())
            which += "run1=" + std::string(haltReasonName(*run1.haltReason()));
        if (run2.haltReason())
            which += std::string(which.empty() ? "" : " ") +
                     "run2=" + std::string(haltReasonName(*run2.haltReason()));
        verdict.detail = which;
        return verdict;
    }

    EquivChecker checker(run1, run2, niCase.observer);
    if (checker.checkHeaps()) {
        verdict.pass = true;
        verdict.clause = "heap-equiv";
        verdict.detail = "bijection size " + std::to_string(checker.bijection().size());
    } else {
        verdict.pass = false;
        verdict.clause = "fail";
        verdict.detail = checker.diagnostic();
    }
    return verdict;
}

std::vector<NiCase> loadManifest(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw ExecError("cannot open manifest " + path);
    nlohmann::json doc = nlohmann::json::parse(in);
    std::filesystem::path base = std::filesystem::path(path).parent_path();

    auto loadProgram = [&](const nlohmann::json& entry) -> Program {
        auto readFile = [&](const std::string& rel) {
            std::ifstream f(base / rel);
            if (!f)
                throw ExecError("cannot open program file " + rel);
            std::ostringstream ss;
            ss << f.rdbuf();
            return ss.str();
        };
        if (entry.contains("source"))
            return minijs::compile(readFile(entry["source"].get<std::string>()));
        if (entry.contains("asm"))
            return parseAssembly(readFile(entry["asm"].get<std::string>()));
        if (entry.contains("inline-source"))
            return minijs::compile(entry["inline-source"].get<std::string>());
        throw ExecError("case needs a `source`, `asm` or `inline-source` field");
    };

    auto toValue = [](const nlohmann::json& v) -> Value {
        if (v.is_boolean())
            return v.get<bool>();
        if (v.is_number_integer())
            return v.get<int64_t>();
        if (v.is_number_float())
            return v.get<double>();
        if (v.is_string())
            return v.get<std::string>();
        throw ExecError("unsupported input value type in manifest");
    };

    std::vector<NiCase> cases;
    for (const auto& entry : doc.at("cases")) {
        NiCase c;
        c.registry = std::make_shared<DomainRegistry>();
        c.name = entry.at("name").get<std::string>();
        c.program = loadProgram(entry);
        if (entry.contains("inputs")) {
            for (auto& [name, spec] : entry["inputs"].items()) {
                NiInput input;
                input.name = name;
                input.value = {toValue(spec.at("value")),
                               c.registry->parse(spec.value("label", "low"))};
                c.shared.push_back(std::move(input));
            }
        }
        for (auto& [name, spec] : entry.at("secrets").items()) {
            NiCase::Secret secret;
            secret.name = name;
            secret.label = c.registry->parse(spec.value("label", "{secret}"));
            secret.a = toValue(spec.at("a"));
            secret.b = toValue(spec.at("b"));
            c.secrets.push_back(std::move(secret));
        }
        c.observer = c.registry->parse(entry.value("observer", "low"));
        c.expect = entry.value("expect", "pass");
        c.expectOff = entry.value("expect_off", "");
        cases.push_back(std::move(c));
    }
    return cases;
}

std::string renderReport(const std::vector<NiReportEntry>& entries) {
    if (entries.empty())
        return "0 cases\n";
    std::ostringstream out;
    int passes = 0;
    for (const NiReportEntry& e : entries) {
        out << "case " << e.name << ": " << (e.verdict.pass ? "PASS" : "FAIL") << " ("
            << e.verdict.clause << " clause)";
        if (!e.verdict.detail.empty())
            out << " -- " << e.verdict.detail;
        if (!e.asExpected)
            out << " [UNEXPECTED]";
        out << "\n";
        passes += e.verdict.pass ? 1 : 0;
    }
    out << passes << "/" << entries.size() << " PASS\n";
    return out.str();
}

std::string renderReportJson(const std::vector<NiReportEntry>& entries) {
    nlohmann::json doc;
    doc["cases"] = nlohmann::json::array();
    int passes = 0;
    for (const NiReportEntry& e : entries) {
        nlohmann::json item;
        item["name"] = e.name;
        item["pass"] = e.verdict.pass;
        item["clause"] = e.verdict.clause;
        item["detail"] = e.verdict.detail;
        item["as_expected"] = e.asExpected;
        item["low_steps_compared"] = e.verdict.lowStepsCompared;
        doc["cases"].push_back(std::move(item));
        passes += e.verdict.pass ? 1 : 0;
    }
    doc["pass_count"] = passes;
    doc["total"] = entries.size();
    return doc.dump(2) + "\n";
}

} // namespace ifcvm
