#pragma once

#include "ifcvm/bytecode.hpp"
#include "ifcvm/cfg.hpp"
#include "ifcvm/heap.hpp"
#include "ifcvm/label.hpp"
#include "ifcvm/value.hpp"

#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace ifcvm {

enum class IfcMode { Off, Deferred };

enum class HaltReason {
    IfcStarUse,          // star-bearing value used in a branch/call/eval
    IfcScopeViolation,   // scope-chain pop/push under a higher context
    IfcHeapStarWrite,    // star-bearing value (or guarded structure) to heap
    UncaughtException,
    RuntimeTypeError,
};

std::string_view haltReasonName(HaltReason reason);

enum class RunStatus { Running, NormalEnd, Halted };

struct MachineConfig {
    IfcMode ifcMode = IfcMode::Deferred;
    bool sparse = false;             // sparse-labeling fast path (requires Deferred)
    bool checkInvariants = false;    // per-step debug assertions
    int maxCallDepth = 512;          // overflow raises a catchable error
    std::ostream* traceStream = nullptr;
};

// One pc-stack entry: (label, IPD node, call-frame id, handler flag).
// Labels are monotonically non-decreasing bottom to top.
struct PcEntry {
    Label label;
    NodeId ipdNode = kNoNode;
    uint64_t frameId = 0;
    bool handlerFlag = false;
};

struct CallFrame {
    uint64_t id = 0;
    int blockIndex = 0;
    bool handlerOnStack = false;   // selects the CFG variant for callees
    std::vector<LabeledValue> registers;
    ScopeChain scope;
    int scopeBaseLen = 0;          // chain length before any with-scopes
    NodeId currentNode = 0;        // ι while on top; the call site otherwise
    NodeId returnAddress = kNoNode;
    int argCount = 0;
    std::optional<Location> callee;
    Label calleeLabel;             // l_c
    bool getter = false;
    int dReg = -1;
    // Sparse labeling: while set, every register is implicitly labeled
    // sparseLabel and per-register labels are stale.
    bool sparse = false;
    Label sparseLabel;
};

struct MachineStats {
    uint64_t instructions = 0;
    uint64_t labelJoins = 0;
};

struct ExecError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class Machine {
public:
    Machine(Program program, MachineConfig config, std::shared_ptr<DomainRegistry> registry);

    // Installs a labeled global before the run starts.
    void setGlobalInput(const std::string& name, LabeledValue value);

    void start(); // sets up the entry frame without stepping
    RunStatus run(uint64_t maxSteps = 50'000'000);
    bool stepOnce();               // false once the machine is finished

    RunStatus status() const { return status_; }
    std::optional<HaltReason> haltReason() const { return haltReason_; }
    const LabeledValue& gamma() const { return gamma_; }
    const Heap& heap() const { return heap_; }
    const Program& program() const { return program_; }
    const std::vector<CallFrame>& frames() const { return frames_; }
    const std::vector<PcEntry>& pcStack() const { return pcStack_; }
    const MachineStats& stats() const { return stats_; }
    Location globalLocation() const { return globalLoc_; }
    DomainRegistry& registry() { return *registry_; }

    Label pcLabel() const {
        return pcStack_.empty() ? Label::bottom() : pcStack_.back().label;
    }

    // Effective register label, honoring the sparse fast path.
    LabeledValue readRegister(const CallFrame& frame, int index) const;

    const Cfg& cfgOf(const CallFrame& frame) const;

    // Deterministic observer-projected heap dump; non-visible values are
    // replaced by an opaque marker but labels always print.
    std::string dumpHeap(Label observer) const;
    std::string dumpState(Label observer) const; // gamma + heap

    // Exposed for unit tests: the pc-stack push/pop meta-functions.
    void pcPush(Label label, NodeId ipdNode, uint64_t frameId, bool handlerFlag,
                const Cfg& cfg);
    void applyIsIPD(NodeId nextNode, uint64_t frameId);

private:
    struct LookupReply;

    Program program_;
    MachineConfig config_;
    std::shared_ptr<DomainRegistry> registry_;
    // Both CFG variants per block, built when the block is installed.
    std::vector<std::unique_ptr<std::pair<Cfg, Cfg>>> cfgs_;
    std::vector<Label> blockDomainLabels_;

    Heap heap_;
    Location objectProtoLoc_ = 0;
    Location globalLoc_ = 0;
    Location evalFuncLoc_ = 0;

    std::vector<CallFrame> frames_;
    std::vector<PcEntry> pcStack_;
    LabeledValue gamma_;
    std::optional<LabeledValue> excValue_;
    bool excIsTypeError_ = false;
    RunStatus status_ = RunStatus::Running;
    std::optional<HaltReason> haltReason_;
    std::string haltDetail_;
    LabeledValue haltMessage_;
    uint64_t nextFrameId_ = 1;
    int evalCounter_ = 0;
    MachineStats stats_;
    bool started_ = false;

    bool deferred() const { return config_.ifcMode == IfcMode::Deferred; }

    void installBlockCfgs(int blockIndex);
    int appendCompiledBlocks(Program&& compiled);

    void startEntryFrame();
    void halt(HaltReason reason, std::string detail);
    void writeRegister(CallFrame& frame, int dst, Value value, Label label);
    void materialize(CallFrame& frame);
    Label operandLabel(const CallFrame& frame, const Operand& op, Label blockDomain) const;
    LabeledValue operandValue(const CallFrame& frame, const Operand& op, Label blockDomain) const;

    bool coveredByTable(const CodeBlock& block, NodeId node,
                        const ExceptionRange** range = nullptr) const;
    void doCall(Opcode op, NodeId node);
    void doCallEval(NodeId node);
    void doReturn();
    void doThrow(NodeId siteNode);
    void unwindFromSen();
    void throwTypeError(std::string message, Label label, NodeId node);
    void enterHandler(int frameIndex, const ExceptionRange& range);

    void dispatch(const Instruction& ins, NodeId node);
    bool sparseFastPath(const Instruction& ins, NodeId node);
    void checkInvariants();
    void traceStep(NodeId node, std::string_view what);

public:
    std::string haltDetail() const { return haltDetail_; }
    // Exception/halt message value; printing code must project by observer.
    const LabeledValue& haltMessage() const { return haltMessage_; }
};

} // namespace ifcvm
