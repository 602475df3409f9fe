#pragma once

#include "ifcvm/interpreter.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ifcvm {

// Partial bijection on heap locations: functional and injective in both
// directions.
class Bijection {
public:
    // Records (a, b); false if it conflicts with an existing pair.
    bool pair(Location a, Location b);
    bool contains(Location a, Location b) const;
    std::optional<Location> forward(Location a) const;
    std::optional<Location> backward(Location b) const;
    size_t size() const { return forward_.size(); }
    const std::map<Location, Location>& pairs() const { return forward_; }

private:
    std::map<Location, Location> forward_;
    std::map<Location, Location> backward_;
};

struct NiInput {
    std::string name;
    LabeledValue value;
};

// One differential case: a program, shared low inputs and two secret
// assignments that differ only in the (high-labeled) secret positions.
struct NiCase {
    std::string name;
    Program program;
    std::vector<NiInput> shared;
    // (name, label, value for run A, value for run B)
    struct Secret {
        std::string name;
        Label label;
        Value a;
        Value b;
    };
    std::vector<Secret> secrets;
    Label observer; // default bottom
    std::string expect;    // "pass" / "fail"
    std::string expectOff; // expected verdict with the monitor off; may be empty
    // Registry that assigned the bits used by the labels above; shared by
    // both runs so block domain annotations land on consistent bits.
    std::shared_ptr<DomainRegistry> registry;
};

// Builds the appendix equivalences over two finished (or paused) machines,
// constructing the witness bijection greedily by simultaneous traversal from
// paired roots.
class EquivChecker {
public:
    EquivChecker(const Machine& m1, const Machine& m2, Label observer);

    // Heap equivalence from the global roots (Defs. 2-5).
    bool checkHeaps();
    // Full state equivalence (Defs. 6-9); requires both machines paused at a
    // low step.
    bool checkState();

    const Bijection& bijection() const { return beta_; }
    const std::string& diagnostic() const { return diagnostic_; }

    // Individual definitions, exposed for unit tests.
    bool equivValues(const LabeledValue& v1, const LabeledValue& v2, const std::string& path);
    bool equivLocations(Location a, Location b, const std::string& path);
    bool equivScopeChains(const ScopeChain& s1, const ScopeChain& s2, const std::string& path);

private:
    const Machine& m1_;
    const Machine& m2_;
    Label observer_;
    Bijection beta_;
    std::string diagnostic_;

    bool visible(Label l) const { return l.visibleTo(observer_); }
    bool fail(const std::string& path, const std::string& why);
    bool equivObjects(Location a, Location b, const std::string& path);
    bool equivPcStacks();
    bool equivCallStacks();
    bool equivFrames(const CallFrame& f1, const CallFrame& f2, const std::string& path);
};

struct NiVerdict {
    bool pass = false;
    std::string clause; // "halt", "heap-equiv", "nontermination", or "fail"
    std::string detail;
    RunStatus status1 = RunStatus::Running, status2 = RunStatus::Running;
    std::optional<HaltReason> halt1, halt2;
    bool lockstepChecked = false;
    uint64_t lowStepsCompared = 0;
};

struct NiCheckOptions {
    IfcMode mode = IfcMode::Deferred;
    bool sparse = false;
    bool lockstep = false;
    bool checkInvariants = false;
    uint64_t maxSteps = 20'000'000;
};

NiVerdict checkNI(const NiCase& niCase, const NiCheckOptions& options);

// Manifest loading: JSON listing program path (source or asm), inputs,
// secret assignments and expected verdicts. Paths resolve relative to the
// manifest file.
std::vector<NiCase> loadManifest(const std::string& path);

struct NiReportEntry {
    std::string name;
    NiVerdict verdict;
    bool asExpected = true;
};

std::string renderReport(const std::vector<NiReportEntry>& entries);
std::string renderReportJson(const std::vector<NiReportEntry>& entries);

} // namespace ifcvm
