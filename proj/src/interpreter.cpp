#include "ifcvm/interpreter.hpp"

#include "ifcvm/minijs.hpp"
#include "ifcvm/primops.hpp"

#include <cassert>
#include <ostream>
#include <sstream>

namespace ifcvm {

std::string_view haltReasonName(HaltReason reason) {
    switch (reason) {
    case HaltReason::IfcStarUse: return "ifc-star-use";
    case HaltReason::IfcScopeViolation: return "ifc-scope-violation";
    case HaltReason::IfcHeapStarWrite: return "ifc-heap-star-write";
    case HaltReason::UncaughtException: return "uncaught-exception";
    case HaltReason::RuntimeTypeError: return "runtime-type-error";
    }
    return "?";
}

Machine::Machine(Program program, MachineConfig config,
                 std::shared_ptr<DomainRegistry> registry)
    : program_(std::move(program)), config_(config), registry_(std::move(registry)) {
    if (!registry_)
        registry_ = std::make_shared<DomainRegistry>();
    if (config_.sparse && config_.ifcMode != IfcMode::Deferred)
        throw ExecError("--sparse requires the deferred monitor");
    auto diags = validate(program_);
    if (!diags.empty())
        throw ExecError("program failed validation: " + diags.front().str());
    for (int i = 0; i < static_cast<int>(program_.blocks.size()); ++i)
        installBlockCfgs(i);

    // Well-known objects: an object prototype, the global object and the
    // genuine eval, allocated in this fixed order in every run.
    ObjectRecord objectProto;
    objectProtoLoc_ = heap_.allocate(std::move(objectProto));
    ObjectRecord global;
    global.protoRef = objectProtoLoc_;
    globalLoc_ = heap_.allocate(std::move(global));
    ObjectRecord evalFunc;
    evalFunc.protoRef = objectProtoLoc_;
    evalFunc.functionPart = FunctionPart{-1, nullptr, /*isHostEval=*/true};
    evalFuncLoc_ = heap_.allocate(std::move(evalFunc));
    heap_.at(globalLoc_).set("eval", PropertyDescriptor{{Location{evalFuncLoc_}, Label::bottom()}});
}

void Machine::installBlockCfgs(int blockIndex) {
    const CodeBlock& block = program_.blocks[blockIndex];
    auto pair = std::make_unique<std::pair<Cfg, Cfg>>(buildCfg(block, false),
                                                      buildCfg(block, true));
    if (static_cast<int>(cfgs_.size()) <= blockIndex)
        cfgs_.resize(blockIndex + 1);
    cfgs_[blockIndex] = std::move(pair);
    Label domainLabel = block.domain.empty() ? Label::bottom()
                                             : registry_->labelOf(block.domain);
    if (static_cast<int>(blockDomainLabels_.size()) <= blockIndex)
        blockDomainLabels_.resize(blockIndex + 1);
    blockDomainLabels_[blockIndex] = domainLabel;
}

const Cfg& Machine::cfgOf(const CallFrame& frame) const {
    auto& pair = *cfgs_[frame.blockIndex];
    return frame.handlerOnStack ? pair.second : pair.first;
}

void Machine::setGlobalInput(const std::string& name, LabeledValue value) {
    if (started_)
        throw ExecError("inputs must be set before the run starts");
    heap_.at(globalLoc_).set(name, PropertyDescriptor{std::move(value)});
}

void Machine::startEntryFrame() {
    started_ = true;
    CallFrame frame;
    frame.id = nextFrameId_++;
    frame.blockIndex = 0;
    frame.handlerOnStack = false;
    frame.registers.assign(program_.blocks[0].registerCount, LabeledValue::undef());
    frame.scope = pushScopeNode(nullptr, ScopeNode{globalLoc_, Label::bottom(), nullptr});
    frame.scopeBaseLen = 1;
    frame.currentNode = 0;
    frame.sparse = config_.sparse && deferred();
    frame.sparseLabel = Label::bottom();
    frames_.push_back(std::move(frame));
}

void Machine::halt(HaltReason reason, std::string detail) {
    status_ = RunStatus::Halted;
    haltReason_ = reason;
    haltDetail_ = std::move(detail);
}

LabeledValue Machine::readRegister(const CallFrame& frame, int index) const {
    const LabeledValue& slot = frame.registers.at(index);
    if (frame.sparse)
        return {slot.value, frame.sparseLabel};
    return slot;
}

void Machine::writeRegister(CallFrame& frame, int dst, Value value, Label label) {
    if (!deferred()) {
        frame.registers.at(dst) = {std::move(value), Label::bottom()};
        return;
    }
    assert(!frame.sparse && "eager write into a sparse frame; materialize first");
    Label pc = pcLabel();
    Label& old = frame.registers.at(dst).label;
    if (!pc.leq(old))
        label = label.withStar();
    frame.registers.at(dst) = {std::move(value), label};
}

void Machine::materialize(CallFrame& frame) {
    for (LabeledValue& reg : frame.registers)
        reg.label = frame.sparseLabel;
    frame.sparse = false;
}

Label Machine::operandLabel(const CallFrame& frame, const Operand& op,
                            Label blockDomain) const {
    if (op.kind == OperandKind::Register)
        return readRegister(frame, static_cast<int>(op.num)).label;
    return blockDomain; // immediates carry the block's origin domain
}

LabeledValue Machine::operandValue(const CallFrame& frame, const Operand& op,
                                   Label blockDomain) const {
    switch (op.kind) {
    case OperandKind::Register:
        return readRegister(frame, static_cast<int>(op.num));
    case OperandKind::Int:
        return {op.num, blockDomain};
    case OperandKind::Bool:
        return {op.flag, blockDomain};
    case OperandKind::Ident:
        return {op.text, blockDomain};
    default:
        throw ExecError("operand cannot be read as a value");
    }
}

void Machine::pcPush(Label label, NodeId ipdNode, uint64_t frameId, bool handlerFlag,
                     const Cfg& cfg) {
    if (!deferred())
        return;
    // When the IPD is the SEN the real join point is already on the stack;
    // the virtual sink gets the same treatment (see decisions notes): a
    // branch whose arms only rejoin "after" the function cannot leak
    // through a terminating path under TINI.
    if (cfg.isSen(ipdNode) || cfg.isSink(ipdNode)) {
        if (!pcStack_.empty())
            pcStack_.back().label = pcStack_.back().label.join(label);
        return;
    }
    if (!pcStack_.empty() && pcStack_.back().ipdNode == ipdNode &&
        pcStack_.back().frameId == frameId) {
        pcStack_.back().label = pcStack_.back().label.join(label);
        return;
    }
    pcStack_.push_back({label.join(pcLabel()), ipdNode, frameId, handlerFlag});
}

void Machine::applyIsIPD(NodeId nextNode, uint64_t frameId) {
    if (pcStack_.empty())
        return;
    PcEntry& top = pcStack_.back();
    if (top.ipdNode == nextNode && top.frameId == frameId) {
        pcStack_.pop_back();
        // Nesting property: at most one entry can match a given arrival.
        assert(pcStack_.empty() || pcStack_.back().ipdNode != nextNode ||
               pcStack_.back().frameId != frameId);
    }
}

bool Machine::coveredByTable(const CodeBlock& block, NodeId node,
                             const ExceptionRange** rangeOut) const {
    for (const ExceptionRange& range : block.exceptionTable) {
        if (node >= range.start && node < range.end) {
            if (rangeOut)
                *rangeOut = &range;
            return true;
        }
    }
    return false;
}

void Machine::start() {
    if (!started_)
        startEntryFrame();
}

RunStatus Machine::run(uint64_t maxSteps) {
    if (!started_)
        startEntryFrame();
    for (uint64_t i = 0; i < maxSteps && status_ == RunStatus::Running; ++i)
        stepOnce();
    return status_;
}

bool Machine::stepOnce() {
    if (status_ != RunStatus::Running)
        return false;
    if (!started_)
        startEntryFrame();
    if (frames_.empty()) {
        status_ = RunStatus::NormalEnd;
        return false;
    }

    uint64_t joinsBefore = joinCount();
    CallFrame& frame = frames_.back();
    const Cfg& cfg = cfgOf(frame);
    NodeId node = frame.currentNode;

    if (cfg.isSen(node)) {
        traceStep(node, "sen");
        unwindFromSen();
        stats_.labelJoins += joinCount() - joinsBefore;
        if (config_.checkInvariants)
            checkInvariants();
        return status_ == RunStatus::Running;
    }

    const CodeBlock& block = program_.blocks[frame.blockIndex];
    const Instruction& ins = block.instructions.at(node);
    traceStep(node, opcodeName(ins.opcode));
    ++stats_.instructions;

    bool handled = false;
    if (deferred() && frame.sparse) {
        if (pcLabel() != frame.sparseLabel)
            materialize(frame);
        else
            handled = sparseFastPath(ins, node);
    }
    if (!handled) {
        if (!frames_.empty() && frames_.back().sparse)
            materialize(frames_.back());
        dispatch(ins, node);
    }

    stats_.labelJoins += joinCount() - joinsBefore;
    if (config_.checkInvariants)
        checkInvariants();
    return status_ == RunStatus::Running;
}

// Sparse-labeling fast path: while every register is implicitly labeled with
// the frame's sparse label and the pc is unchanged, register-only opcodes
// skip all label bookkeeping. Anything touching the heap, the scope chain or
// another frame materializes first.
bool Machine::sparseFastPath(const Instruction& ins, NodeId node) {
    CallFrame& frame = frames_.back();
    const Cfg& cfg = cfgOf(frame);
    Label domain = blockDomainLabels_[frame.blockIndex];
    auto immOk = [&](const Operand& op) {
        return op.kind == OperandKind::Register || domain.leq(frame.sparseLabel);
    };

    switch (ins.opcode) {
    case Opcode::Prim: {
        if (!immOk(ins.operands[2]) ||
            (ins.operands.size() > 3 && !immOk(ins.operands[3])))
            return false;
        PrimOp tag = *primOpFromName(ins.operands[0].text);
        Value a = operandValue(frame, ins.operands[2], domain).value;
        Value b = primOpIsUnary(tag)
                      ? Value(Undefined{})
                      : operandValue(frame, ins.operands[3], domain).value;
        const Value& probe = a;
        bool isFn = isLocation(probe) && heap_.at(std::get<Location>(probe)).isFunction();
        Value result = evalPrim(tag, a, b, isFn);
        frame.registers.at(ins.operands[1].num).value = std::move(result);
        frame.currentNode = node + 1;
        applyIsIPD(frame.currentNode, frame.id);
        return true;
    }
    case Opcode::Mov: {
        if (!immOk(ins.operands[1]))
            return false;
        frame.registers.at(ins.operands[0].num).value =
            operandValue(frame, ins.operands[1], domain).value;
        frame.currentNode = node + 1;
        applyIsIPD(frame.currentNode, frame.id);
        return true;
    }
    case Opcode::TypeOf: {
        const Value& v = frame.registers.at(ins.operands[1].num).value;
        std::string type;
        if (isUndefined(v)) type = "undefined";
        else if (isNull(v)) type = "object";
        else if (std::holds_alternative<bool>(v)) type = "boolean";
        else if (isNumber(v)) type = "number";
        else if (isString(v)) type = "string";
        else if (isLocation(v))
            type = heap_.at(std::get<Location>(v)).isFunction() ? "function" : "object";
        else type = "object";
        frame.registers.at(ins.operands[0].num).value = std::move(type);
        frame.currentNode = node + 1;
        applyIsIPD(frame.currentNode, frame.id);
        return true;
    }
    case Opcode::Jmp:
        frame.currentNode = static_cast<NodeId>(ins.operands[0].num);
        applyIsIPD(frame.currentNode, frame.id);
        return true;
    case Opcode::JFalse: {
        // Guard label equals the pc here, so no star and no label rise.
        bool taken = !truthy(frame.registers.at(ins.operands[0].num).value);
        NodeId ipd = cfg.ipd[node];
        if (!cfg.isSen(ipd) && !cfg.isSink(ipd) &&
            !(!pcStack_.empty() && pcStack_.back().ipdNode == ipd &&
              pcStack_.back().frameId == frame.id))
            pcStack_.push_back({frame.sparseLabel, ipd, frame.id, false});
        frame.currentNode = taken ? cfg.left(node) : cfg.right(node);
        applyIsIPD(frame.currentNode, frame.id);
        return true;
    }
    case Opcode::LoopIfLess: {
        const Value& a = frame.registers.at(ins.operands[0].num).value;
        const Value& b = frame.registers.at(ins.operands[1].num).value;
        bool taken = truthy(evalPrim(PrimOp::Less, a, b, false));
        NodeId ipd = cfg.ipd[node];
        if (!cfg.isSen(ipd) && !cfg.isSink(ipd) &&
            !(!pcStack_.empty() && pcStack_.back().ipdNode == ipd &&
              pcStack_.back().frameId == frame.id))
            pcStack_.push_back({frame.sparseLabel, ipd, frame.id, false});
        frame.currentNode = taken ? cfg.left(node) : cfg.right(node);
        applyIsIPD(frame.currentNode, frame.id);
        return true;
    }
    case Opcode::CallPutResult: {
        if (!gamma_.label.leq(frame.sparseLabel))
            return false;
        frame.registers.at(ins.operands[0].num).value = gamma_.value;
        frame.currentNode = node + 1;
        applyIsIPD(frame.currentNode, frame.id);
        return true;
    }
    default:
        return false;
    }
}

void Machine::throwTypeError(std::string message, Label label, NodeId node) {
    excValue_ = LabeledValue{std::string("TypeError: ") + std::move(message), label};
    excIsTypeError_ = true;
    doThrow(node);
}

void Machine::doThrow(NodeId siteNode) {
    CallFrame& frame = frames_.back();
    const CodeBlock& block = program_.blocks[frame.blockIndex];
    const ExceptionRange* range = nullptr;
    if (coveredByTable(block, siteNode, &range)) {
        enterHandler(static_cast<int>(frames_.size()) - 1, *range);
        return;
    }
    const Cfg& cfg = cfgOf(frame);
    if (cfg.handlerVariant) {
        // Control moves to the SEN; the handler search happens there.
        frame.currentNode = cfg.sen;
        applyIsIPD(cfg.sen, frame.id);
        return;
    }
    // No handler anywhere on the stack: the program terminates instantly.
    // The exception message stays invisible to low observers.
    haltMessage_ = excValue_.value_or(LabeledValue::undef());
    halt(excIsTypeError_ ? HaltReason::RuntimeTypeError : HaltReason::UncaughtException,
         "uncaught exception");
    excValue_.reset();
}

void Machine::unwindFromSen() {
    CallFrame& frame = frames_.back();
    if (!excValue_.has_value()) {
        doReturn();
        return;
    }
    // Search the call stack backward for the first frame whose current node
    // (its in-flight call site) is covered; pop everything above it. The
    // pc-stack is left untouched so the handler runs at the thrower's pc.
    frames_.pop_back();
    while (!frames_.empty()) {
        CallFrame& candidate = frames_.back();
        const CodeBlock& block = program_.blocks[candidate.blockIndex];
        const ExceptionRange* range = nullptr;
        if (coveredByTable(block, candidate.currentNode, &range)) {
            enterHandler(static_cast<int>(frames_.size()) - 1, *range);
            return;
        }
        const Cfg& cfg = cfgOf(candidate);
        if (cfg.handlerVariant && !cfg.isSen(candidate.currentNode)) {
            // Let the caller's SEN take over (its IPD bookkeeping applies).
            candidate.currentNode = cfg.sen;
            applyIsIPD(cfg.sen, candidate.id);
            return;
        }
        frames_.pop_back();
    }
    haltMessage_ = excValue_.value_or(LabeledValue::undef());
    halt(excIsTypeError_ ? HaltReason::RuntimeTypeError : HaltReason::UncaughtException,
         "uncaught exception");
    excValue_.reset();
}

void Machine::enterHandler(int frameIndex, const ExceptionRange& range) {
    frames_.resize(frameIndex + 1);
    CallFrame& frame = frames_.back();
    // Restore the scope chain to the handler's recorded depth.
    int target = frame.scopeBaseLen + range.scopeDepth;
    while (scopeChainLength(frame.scope) > target && frame.scope)
        frame.scope = frame.scope->next;
    if (frame.sparse)
        materialize(frame); // the incoming exception value has its own label
    frame.currentNode = range.handler;
    applyIsIPD(range.handler, frame.id);
}

void Machine::doReturn() {
    CallFrame finished = std::move(frames_.back());
    frames_.pop_back();
    if (frames_.empty()) {
        status_ = RunStatus::NormalEnd;
        return;
    }
    CallFrame& caller = frames_.back();
    if (finished.getter && finished.dReg >= 0) {
        Label label = gamma_.label.join(pcLabel());
        if (caller.sparse) {
            if (label == caller.sparseLabel)
                caller.registers.at(finished.dReg).value = gamma_.value;
            else {
                materialize(caller);
                writeRegister(caller, finished.dReg, gamma_.value, label);
            }
        } else {
            writeRegister(caller, finished.dReg, gamma_.value, label);
        }
    }
    caller.currentNode = finished.returnAddress;
    applyIsIPD(caller.currentNode, caller.id);
}

void Machine::doCall(Opcode op, NodeId node) {
    CallFrame& caller = frames_.back();
    const CodeBlock& callerBlock = program_.blocks[caller.blockIndex];
    const Cfg& callerCfg = cfgOf(caller);
    const Instruction& ins = callerBlock.instructions[node];
    int funcReg = static_cast<int>(ins.operands[0].num);
    int argc = static_cast<int>(ins.operands[1].num);

    LabeledValue fv = readRegister(caller, funcReg);
    if (deferred() && fv.label.star()) {
        halt(HaltReason::IfcStarUse, "call through a star-labeled function value");
        return;
    }
    if (!isLocation(fv.value)) {
        throwTypeError("value is not a function", fv.label.join(pcLabel()), node);
        return;
    }
    Location funcLoc = std::get<Location>(fv.value);
    const ObjectRecord& funcObj = heap_.at(funcLoc);
    if (!funcObj.isFunction()) {
        throwTypeError("value is not a function", fv.label.join(pcLabel()), node);
        return;
    }
    if (funcObj.functionPart->isHostEval) {
        if (op == Opcode::CallEval) {
            doCallEval(node);
            return;
        }
        halt(HaltReason::RuntimeTypeError, "host call not modeled");
        return;
    }
    if (static_cast<int>(frames_.size()) >= config_.maxCallDepth) {
        excValue_ = LabeledValue{std::string("RangeError: maximum call depth exceeded"),
                                 fv.label.join(pcLabel())};
        excIsTypeError_ = false;
        doThrow(node);
        return;
    }

    int calleeBlockIdx = funcObj.functionPart->codeBlock;
    const CodeBlock& calleeBlock = program_.blocks[calleeBlockIdx];
    Label funcStructLabel = funcObj.structLabel; // l_f
    Label newPc = funcStructLabel.join(fv.label).join(pcLabel());
    bool covered = coveredByTable(callerBlock, node);

    CallFrame frame;
    frame.id = nextFrameId_++;
    frame.blockIndex = calleeBlockIdx;
    frame.handlerOnStack = covered || caller.handlerOnStack;
    frame.registers.assign(calleeBlock.registerCount, LabeledValue{Undefined{}, newPc});
    frame.scope = funcObj.functionPart->scope;
    frame.scopeBaseLen = scopeChainLength(frame.scope);
    frame.returnAddress = node + 1;
    frame.argCount = argc;
    frame.callee = funcLoc;
    frame.calleeLabel = fv.label;
    frame.currentNode = 0;

    // Arguments come from the caller's top argc registers, in order.
    int base = callerBlock.registerCount - argc;
    bool sparseOk = config_.sparse && deferred();
    for (int i = 0; i < argc && base + i < callerBlock.registerCount; ++i) {
        LabeledValue arg = readRegister(caller, base + i);
        if (i < calleeBlock.registerCount) {
            sparseOk = sparseOk && arg.label == newPc;
            frame.registers[i] = std::move(arg);
        }
    }
    frame.sparse = sparseOk;
    frame.sparseLabel = newPc;

    caller.currentNode = node; // call site, for unwinding
    pcPush(newPc, callerCfg.ipd[node], caller.id, covered, callerCfg);
    frames_.push_back(std::move(frame));
    applyIsIPD(0, frames_.back().id);
}

void Machine::doCallEval(NodeId node) {
    CallFrame& caller = frames_.back();
    const CodeBlock& callerBlock = program_.blocks[caller.blockIndex];
    const Cfg& callerCfg = cfgOf(caller);
    const Instruction& ins = callerBlock.instructions[node];
    int argc = static_cast<int>(ins.operands[1].num);
    LabeledValue fv = readRegister(caller, static_cast<int>(ins.operands[0].num));

    LabeledValue source = LabeledValue::undef(pcLabel());
    if (argc >= 1) {
        int base = callerBlock.registerCount - argc;
        source = readRegister(caller, base);
    }
    // eval of a non-string yields the argument unchanged.
    if (!isString(source.value)) {
        gamma_ = {source.value, source.label.join(pcLabel())};
        caller.currentNode = node + 1;
        applyIsIPD(caller.currentNode, caller.id);
        return;
    }
    if (deferred() && source.label.star()) {
        halt(HaltReason::IfcStarUse, "eval of a star-labeled source string");
        return;
    }
    if (static_cast<int>(frames_.size()) >= config_.maxCallDepth) {
        excValue_ = LabeledValue{std::string("RangeError: maximum call depth exceeded"),
                                 source.label.join(pcLabel())};
        excIsTypeError_ = false;
        doThrow(node);
        return;
    }

    // Compute caller-block facts before the append below invalidates the
    // reference (program_.blocks may reallocate).
    bool covered = coveredByTable(callerBlock, node);
    minijs::CompileOptions options;
    options.strict = callerBlock.strictMode;
    options.domain = callerBlock.domain;
    options.blockName = "eval" + std::to_string(++evalCounter_);
    options.evalMode = true;
    Program compiled;
    try {
        compiled = minijs::compile(std::get<std::string>(source.value), options);
    } catch (const std::exception& err) {
        excValue_ = LabeledValue{std::string("SyntaxError: ") + err.what(),
                                 source.label.join(pcLabel())};
        excIsTypeError_ = true;
        doThrow(node);
        return;
    }
    int evalBlockIdx = appendCompiledBlocks(std::move(compiled));
    const CodeBlock& evalBlock = program_.blocks[evalBlockIdx];

    Label funcStructLabel = heap_.at(evalFuncLoc_).structLabel;
    Label evalPc = funcStructLabel.join(fv.label).join(source.label).join(pcLabel());

    ScopeChain scope = caller.scope;
    if (evalBlock.strictMode && (!evalBlock.declaredVars.empty() ||
                                 !evalBlock.declaredFuncs.empty())) {
        // Fresh variable environment for a strict eval.
        ObjectRecord env;
        env.activation = true;
        env.structLabel = evalPc;
        Location envLoc = heap_.allocate(std::move(env));
        Label linkLabel = (!scope || evalPc.leq(scope->linkLabel))
                              ? evalPc
                              : evalPc.withStar();
        scope = pushScopeNode(scope, ScopeNode{envLoc, linkLabel, nullptr});
        ObjectRecord& envRef = heap_.at(envLoc);
        for (const std::string& name : evalBlock.declaredVars)
            envRef.set(name, PropertyDescriptor{LabeledValue::undef(evalPc)});
        for (auto& [name, funcIndex] : evalBlock.declaredFuncs) {
            int fnBlock = evalBlock.functionSources.at(funcIndex);
            ObjectRecord fn;
            fn.protoRef = objectProtoLoc_;
            fn.protoLabel = evalPc;
            fn.structLabel = evalPc;
            fn.functionPart = FunctionPart{fnBlock, scope, false};
            Location fnLoc = heap_.allocate(std::move(fn));
            heap_.at(envLoc).set(name, PropertyDescriptor{{Location{fnLoc}, evalPc}});
        }
    } else if (!evalBlock.declaredVars.empty() || !evalBlock.declaredFuncs.empty()) {
        // Non-strict: hoist into the nearest variable object (activation or
        // global) on the caller's chain.
        Location target = globalLoc_;
        for (const ScopeNode* n = scope.get(); n; n = n->next.get()) {
            if (heap_.at(n->object).activation || n->object == globalLoc_) {
                target = n->object;
                break;
            }
        }
        ObjectRecord& obj = heap_.at(target);
        for (const std::string& name : evalBlock.declaredVars) {
            if (!obj.find(name)) {
                obj.set(name, PropertyDescriptor{LabeledValue::undef(evalPc)});
                obj.structLabel = obj.structLabel.join(evalPc);
            }
        }
        for (auto& [name, funcIndex] : evalBlock.declaredFuncs) {
            int fnBlock = evalBlock.functionSources.at(funcIndex);
            ObjectRecord fn;
            fn.protoRef = objectProtoLoc_;
            fn.protoLabel = evalPc;
            fn.structLabel = evalPc;
            fn.functionPart = FunctionPart{fnBlock, scope, false};
            Location fnLoc = heap_.allocate(std::move(fn));
            ObjectRecord& objAgain = heap_.at(target);
            objAgain.set(name, PropertyDescriptor{{Location{fnLoc}, evalPc}});
            objAgain.structLabel = objAgain.structLabel.join(evalPc);
        }
    }

    CallFrame frame;
    frame.id = nextFrameId_++;
    frame.blockIndex = evalBlockIdx;
    frame.handlerOnStack = covered || caller.handlerOnStack;
    frame.registers.assign(evalBlock.registerCount, LabeledValue{Undefined{}, evalPc});
    frame.scope = scope;
    frame.scopeBaseLen = scopeChainLength(scope);
    frame.returnAddress = node + 1;
    frame.argCount = 0;
    frame.callee = evalFuncLoc_;
    frame.calleeLabel = fv.label;
    frame.currentNode = 0;
    frame.sparse = false;
    frame.sparseLabel = evalPc;

    caller.currentNode = node;
    pcPush(evalPc, callerCfg.ipd[node], caller.id, covered, callerCfg);
    frames_.push_back(std::move(frame));
    applyIsIPD(0, frames_.back().id);
}

int Machine::appendCompiledBlocks(Program&& compiled) {
    int base = static_cast<int>(program_.blocks.size());
    for (CodeBlock& block : compiled.blocks) {
        for (int& fs : block.functionSources)
            fs += base;
        program_.blocks.push_back(std::move(block));
    }
    // Extending the program never touches IPD tables of earlier blocks.
    for (int i = base; i < static_cast<int>(program_.blocks.size()); ++i)
        installBlockCfgs(i);
    auto diags = validate(program_);
    if (!diags.empty())
        throw ExecError("eval produced an invalid block: " + diags.front().str());
    return base;
}

void Machine::dispatch(const Instruction& ins, NodeId node) {
    CallFrame& frame = frames_.back();
    const Cfg& cfg = cfgOf(frame);
    const CodeBlock& block = program_.blocks[frame.blockIndex];
    Label pc = pcLabel();
    Label domain = blockDomainLabels_[frame.blockIndex];

    auto regOf = [&](size_t operandIndex) {
        return static_cast<int>(ins.operands[operandIndex].num);
    };
    auto finishAt = [&](NodeId next) {
        frames_.back().currentNode = next;
        applyIsIPD(next, frames_.back().id);
    };
    auto finish = [&] { finishAt(node + 1); };

    switch (ins.opcode) {
    case Opcode::Enter:
        finish();
        return;

    case Opcode::Prim: {
        PrimOp tag = *primOpFromName(ins.operands[0].text);
        LabeledValue a = operandValue(frame, ins.operands[2], domain);
        LabeledValue b = primOpIsUnary(tag)
                             ? LabeledValue::undef()
                             : operandValue(frame, ins.operands[3], domain);
        bool isFn = isLocation(a.value) &&
                    heap_.at(std::get<Location>(a.value)).isFunction();
        Label label = a.label.join(b.label).join(pc);
        writeRegister(frame, regOf(1), evalPrim(tag, a.value, b.value, isFn), label);
        finish();
        return;
    }

    case Opcode::Mov: {
        LabeledValue src = operandValue(frame, ins.operands[1], domain);
        writeRegister(frame, regOf(0), src.value, src.label.join(pc));
        finish();
        return;
    }

    case Opcode::TypeOf: {
        LabeledValue src = readRegister(frame, regOf(1));
        std::string type;
        if (isUndefined(src.value)) type = "undefined";
        else if (isNull(src.value)) type = "object";
        else if (std::holds_alternative<bool>(src.value)) type = "boolean";
        else if (isNumber(src.value)) type = "number";
        else if (isString(src.value)) type = "string";
        else if (isLocation(src.value))
            type = heap_.at(std::get<Location>(src.value)).isFunction() ? "function"
                                                                        : "object";
        else type = "object";
        writeRegister(frame, regOf(0), std::move(type), src.label.join(pc));
        finish();
        return;
    }

    case Opcode::InstanceOf: {
        LabeledValue value = readRegister(frame, regOf(1));
        LabeledValue proto = readRegister(frame, regOf(2));
        Label acc = pc.join(value.label).join(proto.label);
        bool result = false;
        if (isLocation(value.value) && isLocation(proto.value)) {
            Location target = std::get<Location>(proto.value);
            std::optional<Location> cur = heap_.at(std::get<Location>(value.value)).protoRef;
            Label walk = heap_.at(std::get<Location>(value.value)).protoLabel;
            acc = acc.join(heap_.at(std::get<Location>(value.value)).structLabel);
            while (cur) {
                acc = acc.join(walk);
                if (*cur == target) {
                    result = true;
                    break;
                }
                const ObjectRecord& obj = heap_.at(*cur);
                acc = acc.join(obj.structLabel);
                walk = obj.protoLabel;
                cur = obj.protoRef;
            }
        }
        writeRegister(frame, regOf(0), result, acc);
        finish();
        return;
    }

    case Opcode::JFalse: {
        LabeledValue cond = readRegister(frame, regOf(0));
        if (deferred() && cond.label.star()) {
            halt(HaltReason::IfcStarUse, "branch on a star-labeled value");
            return;
        }
        pcPush(cond.label.join(pc), cfg.ipd[node], frame.id, false, cfg);
        finishAt(!truthy(cond.value) ? cfg.left(node) : cfg.right(node));
        return;
    }

    case Opcode::LoopIfLess: {
        LabeledValue a = readRegister(frame, regOf(0));
        LabeledValue b = readRegister(frame, regOf(1));
        if (deferred() && (a.label.star() || b.label.star())) {
            halt(HaltReason::IfcStarUse, "loop guard on a star-labeled value");
            return;
        }
        pcPush(a.label.join(b.label).join(pc), cfg.ipd[node], frame.id, false, cfg);
        bool taken = truthy(evalPrim(PrimOp::Less, a.value, b.value, false));
        finishAt(taken ? cfg.left(node) : cfg.right(node));
        return;
    }

    case Opcode::Jmp:
        finishAt(static_cast<NodeId>(ins.operands[0].num));
        return;

    case Opcode::Ret: {
        gamma_ = readRegister(frame, regOf(0));
        if (frames_.size() == 1) {
            frames_.pop_back();
            status_ = RunStatus::NormalEnd;
            return;
        }
        if (cfg.handlerVariant) {
            finishAt(cfg.sen);
            return;
        }
        doReturn();
        return;
    }

    case Opcode::End:
        gamma_ = readRegister(frame, regOf(0));
        frames_.clear();
        status_ = RunStatus::NormalEnd;
        return;

    case Opcode::Call:
    case Opcode::Construct:
        doCall(ins.opcode, node);
        return;

    case Opcode::CallEval: {
        LabeledValue fv = readRegister(frame, regOf(0));
        if (deferred() && fv.label.star()) {
            halt(HaltReason::IfcStarUse, "call through a star-labeled function value");
            return;
        }
        if (isLocation(fv.value) && heap_.at(std::get<Location>(fv.value)).isFunction() &&
            heap_.at(std::get<Location>(fv.value)).functionPart->isHostEval) {
            doCallEval(node);
        } else {
            doCall(Opcode::Call, node); // not the genuine eval: plain call
        }
        return;
    }

    case Opcode::CallPutResult:
        writeRegister(frame, regOf(0), gamma_.value, gamma_.label.join(pc));
        finish();
        return;

    case Opcode::CreateArguments: {
        ObjectRecord args;
        args.protoRef = objectProtoLoc_;
        args.protoLabel = pc;
        args.structLabel = pc;
        for (int i = 0; i < frame.argCount && i < static_cast<int>(frame.registers.size());
             ++i)
            args.set(std::to_string(i), PropertyDescriptor{readRegister(frame, i)});
        args.set("length", PropertyDescriptor{{int64_t{frame.argCount}, pc}});
        Location loc = heap_.allocate(std::move(args));
        writeRegister(frame, regOf(0), Location{loc}, pc);
        finish();
        return;
    }

    case Opcode::NewFunc: {
        int funcIndex = static_cast<int>(ins.operands[1].num);
        int target = block.functionSources.at(funcIndex);
        ObjectRecord prototype;
        prototype.protoRef = objectProtoLoc_;
        prototype.protoLabel = pc;
        prototype.structLabel = pc;
        Location protoLoc = heap_.allocate(std::move(prototype));
        ObjectRecord fn;
        fn.protoRef = objectProtoLoc_;
        fn.protoLabel = pc;
        fn.structLabel = pc;
        fn.functionPart = FunctionPart{target, frame.scope, false};
        fn.set("prototype", PropertyDescriptor{{Location{protoLoc}, pc}});
        Location loc = heap_.allocate(std::move(fn));
        writeRegister(frame, regOf(0), Location{loc}, pc);
        finish();
        return;
    }

    case Opcode::CreateActivation: {
        if (frame.scope && !pc.leq(frame.scope->linkLabel)) {
            halt(HaltReason::IfcScopeViolation,
                 "activation push under a higher context than the scope head");
            return;
        }
        ObjectRecord env;
        env.activation = true;
        env.structLabel = pc;
        for (const std::string& name : block.activationVars)
            env.set(name, PropertyDescriptor{LabeledValue::undef(pc)});
        Location loc = heap_.allocate(std::move(env));
        frame.scope = pushScopeNode(frame.scope, ScopeNode{loc, pc, nullptr});
        frame.scopeBaseLen = scopeChainLength(frame.scope);
        writeRegister(frame, regOf(0), Location{loc}, pc);
        finish();
        return;
    }

    case Opcode::CreateThis: {
        if (!frame.callee) {
            throwTypeError("create-this outside a constructed frame", pc, node);
            return;
        }
        const ObjectRecord& callee = heap_.at(*frame.callee);
        std::optional<Location> protoLoc = objectProtoLoc_;
        Label protoLabel = pc;
        if (const PropertyDescriptor* pd = callee.find("prototype");
            pd && !pd->isAccessor() && isLocation(pd->value.value)) {
            protoLoc = std::get<Location>(pd->value.value);
            protoLabel = heap_.at(*protoLoc).structLabel.join(pc).join(pd->value.label);
        }
        ObjectRecord obj;
        obj.protoRef = protoLoc;
        obj.protoLabel = protoLabel;
        obj.structLabel = pc;
        Location loc = heap_.allocate(std::move(obj));
        writeRegister(frame, regOf(0), Location{loc}, pc);
        finish();
        return;
    }

    case Opcode::NewObject: {
        ObjectRecord obj;
        obj.protoRef = objectProtoLoc_;
        obj.protoLabel = pc;
        obj.structLabel = pc;
        Location loc = heap_.allocate(std::move(obj));
        writeRegister(frame, regOf(0), Location{loc}, pc);
        finish();
        return;
    }

    case Opcode::GetById: {
        LabeledValue base = readRegister(frame, regOf(1));
        const std::string& prop = ins.operands[2].text;
        if (!isLocation(base.value)) {
            writeRegister(frame, regOf(0), Undefined{}, base.label.join(pc));
            finish();
            return;
        }
        LookupResult lookup = protoChainLookup(heap_, std::get<Location>(base.value), prop,
                                               pc.join(base.label));
        if (lookup.accessorHit && lookup.getter) {
            const ObjectRecord& getterFn = heap_.at(*lookup.getter);
            if (!getterFn.isFunction()) {
                throwTypeError("getter is not a function", lookup.chainLabel, node);
                return;
            }
            if (static_cast<int>(frames_.size()) >= config_.maxCallDepth) {
                excValue_ = LabeledValue{
                    std::string("RangeError: maximum call depth exceeded"),
                    lookup.chainLabel};
                excIsTypeError_ = false;
                doThrow(node);
                return;
            }
            const CodeBlock& calleeBlock = program_.blocks[getterFn.functionPart->codeBlock];
            Label newPc = getterFn.structLabel.join(lookup.chainLabel).join(pc);
            bool covered = coveredByTable(block, node);
            CallFrame getterFrame;
            getterFrame.id = nextFrameId_++;
            getterFrame.blockIndex = getterFn.functionPart->codeBlock;
            getterFrame.handlerOnStack = covered || frame.handlerOnStack;
            getterFrame.registers.assign(calleeBlock.registerCount,
                                         LabeledValue{Undefined{}, newPc});
            getterFrame.scope = getterFn.functionPart->scope;
            getterFrame.scopeBaseLen = scopeChainLength(getterFrame.scope);
            getterFrame.returnAddress = node + 1;
            getterFrame.argCount = 0;
            getterFrame.callee = *lookup.getter;
            getterFrame.calleeLabel = lookup.chainLabel;
            getterFrame.getter = true;
            getterFrame.dReg = regOf(0);
            getterFrame.currentNode = 0;
            getterFrame.sparse = false;
            getterFrame.sparseLabel = newPc;
            frame.currentNode = node;
            pcPush(newPc, cfg.ipd[node], frame.id, covered, cfg);
            frames_.push_back(std::move(getterFrame));
            applyIsIPD(0, frames_.back().id);
            return;
        }
        writeRegister(frame, regOf(0), lookup.value.value, lookup.value.label.join(pc));
        finish();
        return;
    }

    case Opcode::PutById: {
        LabeledValue value = readRegister(frame, regOf(2));
        if (deferred() && value.label.star()) {
            halt(HaltReason::IfcHeapStarWrite, "star-labeled value written to the heap");
            return;
        }
        LabeledValue base = readRegister(frame, regOf(0));
        const std::string& prop = ins.operands[1].text;
        bool direct = ins.operands[3].flag;
        if (!isLocation(base.value)) {
            throwTypeError("property write on a non-object", base.label.join(pc), node);
            return;
        }
        Location loc = std::get<Location>(base.value);
        ObjectRecord& obj = heap_.at(loc);
        Label ctx = pc;
        if (!direct) {
            ctx = ctx.join(obj.structLabel);
            if (PropertyDescriptor* pd = obj.find(prop);
                pd && !pd->isAccessor() && pd->writable && !block.strictMode) {
                pd->value = {value.value, value.label.join(ctx)};
                finish();
                return;
            }
        }
        bool isNew = obj.find(prop) == nullptr;
        obj.set(prop, PropertyDescriptor{{value.value, value.label.join(ctx)}});
        if (isNew || direct)
            obj.structLabel = obj.structLabel.join(ctx);
        finish();
        return;
    }

    case Opcode::DelById: {
        LabeledValue base = readRegister(frame, regOf(1));
        if (deferred() && base.label.star()) {
            halt(HaltReason::IfcStarUse, "delete through a star-labeled base");
            return;
        }
        const std::string& prop = ins.operands[2].text;
        if (!isLocation(base.value)) {
            throwTypeError("delete on a non-object", base.label.join(pc), node);
            return;
        }
        ObjectRecord& obj = heap_.at(std::get<Location>(base.value));
        Label resultLabel = obj.structLabel.join(pc).join(base.label);
        if (const PropertyDescriptor* pd = obj.find(prop)) {
            if (deferred() && !pc.leq(pd->value.label)) {
                halt(HaltReason::IfcHeapStarWrite,
                     "delete of a lower-labeled property under a higher context");
                return;
            }
            resultLabel = resultLabel.join(pd->value.label);
            if (pd->configurable && !block.strictMode) {
                obj.erase(prop);
                obj.structLabel = obj.structLabel.join(pc);
                writeRegister(frame, regOf(0), true, resultLabel);
            } else {
                writeRegister(frame, regOf(0), false, resultLabel);
            }
        } else {
            writeRegister(frame, regOf(0), true, resultLabel);
        }
        finish();
        return;
    }

    case Opcode::PutGetterSetter: {
        LabeledValue getter = readRegister(frame, regOf(2));
        LabeledValue setter = readRegister(frame, regOf(3));
        if (deferred() && (getter.label.star() || setter.label.star())) {
            halt(HaltReason::IfcHeapStarWrite, "star-labeled accessor written to the heap");
            return;
        }
        LabeledValue base = readRegister(frame, regOf(0));
        if (!isLocation(base.value)) {
            throwTypeError("accessor install on a non-object", base.label.join(pc), node);
            return;
        }
        ObjectRecord& obj = heap_.at(std::get<Location>(base.value));
        if (deferred() && !pc.leq(obj.structLabel)) {
            halt(HaltReason::IfcHeapStarWrite,
                 "accessor install on a lower-labeled structure");
            return;
        }
        AccessorPair accessor;
        if (isLocation(getter.value))
            accessor.getter = std::get<Location>(getter.value);
        if (isLocation(setter.value))
            accessor.setter = std::get<Location>(setter.value);
        PropertyDescriptor pd;
        pd.value = LabeledValue::undef(pc.join(getter.label).join(setter.label));
        pd.accessor = accessor;
        obj.set(ins.operands[1].text, std::move(pd));
        obj.structLabel = obj.structLabel.join(pc);
        finish();
        return;
    }

    case Opcode::GetPnames: {
        LabeledValue base = readRegister(frame, regOf(1));
        if (deferred() && base.label.star()) {
            halt(HaltReason::IfcStarUse, "property enumeration of a star-labeled base");
            return;
        }
        if (!isLocation(base.value)) {
            Label l = base.label.join(pc);
            writeRegister(frame, regOf(0), Undefined{}, l);
            writeRegister(frame, regOf(2), Undefined{}, l);
            writeRegister(frame, regOf(3), Undefined{}, l);
            pcPush(l, cfg.ipd[node], frame.id, false, cfg);
            finishAt(cfg.left(node)); // break target
            return;
        }
        Location loc = std::get<Location>(base.value);
        const ObjectRecord& obj = heap_.at(loc);
        Label full = base.label.join(pc).join(obj.structLabel);
        for (auto& [name, pd] : obj.properties())
            if (pd.enumerable)
                full = full.join(pd.value.label);
        auto names = std::make_shared<const std::vector<std::string>>(
            obj.enumerablePropertyNames());
        int64_t size = static_cast<int64_t>(names->size());
        writeRegister(frame, regOf(0), PropIter{loc, std::move(names)}, full);
        writeRegister(frame, regOf(2), int64_t{0}, base.label.join(pc));
        writeRegister(frame, regOf(3), size, full);
        pcPush(full, cfg.ipd[node], frame.id, false, cfg);
        finishAt(cfg.right(node));
        return;
    }

    case Opcode::NextPname: {
        LabeledValue iter = readRegister(frame, regOf(4));
        const PropIter* pi = std::get_if<PropIter>(&iter.value);
        if (!pi || !pi->names) {
            halt(HaltReason::RuntimeTypeError, "next-pname without a property iterator");
            return;
        }
        int64_t i = static_cast<int64_t>(toNumber(readRegister(frame, regOf(2)).value));
        int64_t size = static_cast<int64_t>(toNumber(readRegister(frame, regOf(3)).value));
        const ObjectRecord& obj = heap_.at(pi->base);
        std::optional<std::string> key;
        while (i < size && i < static_cast<int64_t>(pi->names->size())) {
            const std::string& candidate = (*pi->names)[i];
            ++i;
            // Skip properties deleted (or made non-enumerable) mid-iteration.
            if (const PropertyDescriptor* pd = obj.find(candidate); pd && pd->enumerable) {
                key = candidate;
                break;
            }
        }
        Label iLabel = readRegister(frame, regOf(2)).label.join(pc);
        writeRegister(frame, regOf(2), i, iLabel);
        if (key) {
            writeRegister(frame, regOf(0), *key, iter.label.join(pc));
            finishAt(cfg.left(node));
        } else {
            finishAt(cfg.right(node));
        }
        return;
    }

    case Opcode::Resolve:
    case Opcode::ResolveSkip: {
        const std::string& prop = ins.operands[1].text;
        int skip = ins.opcode == Opcode::ResolveSkip
                       ? static_cast<int>(ins.operands[2].num)
                       : 0;
        Label acc = pc;
        const ScopeNode* nodePtr = frame.scope.get();
        while (skip-- > 0 && nodePtr) {
            acc = acc.join(nodePtr->linkLabel)
                      .join(heap_.at(nodePtr->object).structLabel);
            nodePtr = nodePtr->next.get();
        }
        std::optional<LabeledValue> found;
        while (nodePtr) {
            acc = acc.join(nodePtr->linkLabel);
            LookupResult lookup = protoChainLookup(heap_, nodePtr->object, prop, acc);
            if (lookup.found) {
                found = lookup.value; // accessors yield the stored descriptor value
                break;
            }
            acc = lookup.chainLabel;
            nodePtr = nodePtr->next.get();
        }
        if (!found) {
            excValue_ = LabeledValue{
                std::string("ReferenceError: ") + prop + " is not defined", acc};
            excIsTypeError_ = true;
            doThrow(node);
            return;
        }
        writeRegister(frame, regOf(0), found->value, found->label.join(pc));
        finish();
        return;
    }

    case Opcode::ResolveGlobal: {
        const std::string& prop = ins.operands[1].text;
        LookupResult lookup = protoChainLookup(heap_, globalLoc_, prop, pc);
        writeRegister(frame, regOf(0), lookup.value.value, lookup.value.label.join(pc));
        finish();
        return;
    }

    case Opcode::ResolveBase: {
        const std::string& prop = ins.operands[1].text;
        bool strict = ins.operands[2].flag;
        Label acc = pc;
        const ScopeNode* nodePtr = frame.scope.get();
        while (nodePtr) {
            const ObjectRecord& obj = heap_.at(nodePtr->object);
            acc = acc.join(nodePtr->linkLabel).join(obj.structLabel);
            LookupResult lookup = protoChainLookup(heap_, nodePtr->object, prop, acc);
            if (lookup.found) {
                writeRegister(frame, regOf(0), Location{nodePtr->object}, acc);
                finish();
                return;
            }
            if (!nodePtr->next && strict) {
                writeRegister(frame, regOf(0), Undefined{}, acc);
                finish();
                return;
            }
            nodePtr = nodePtr->next.get();
        }
        writeRegister(frame, regOf(0), Location{globalLoc_}, acc);
        finish();
        return;
    }

    case Opcode::ResolveWithBase: {
        const std::string& prop = ins.operands[2].text;
        Label acc = pc;
        const ScopeNode* nodePtr = frame.scope.get();
        while (nodePtr) {
            const ObjectRecord& obj = heap_.at(nodePtr->object);
            acc = acc.join(nodePtr->linkLabel).join(obj.structLabel);
            LookupResult lookup = protoChainLookup(heap_, nodePtr->object, prop, acc);
            if (lookup.found) {
                writeRegister(frame, regOf(0), Location{nodePtr->object}, acc);
                writeRegister(frame, regOf(1), lookup.value.value,
                              lookup.value.label.join(pc));
                finish();
                return;
            }
            nodePtr = nodePtr->next.get();
        }
        excValue_ = LabeledValue{std::string("ReferenceError: ") + prop + " is not defined",
                                 acc};
        excIsTypeError_ = true;
        doThrow(node);
        return;
    }

    case Opcode::GetScopedVar: {
        int index = static_cast<int>(ins.operands[1].num);
        int skip = static_cast<int>(ins.operands[2].num);
        Label acc = pc;
        const ScopeNode* nodePtr = frame.scope.get();
        while (skip-- > 0 && nodePtr) {
            acc = acc.join(nodePtr->linkLabel)
                      .join(heap_.at(nodePtr->object).structLabel);
            nodePtr = nodePtr->next.get();
        }
        if (!nodePtr) {
            halt(HaltReason::RuntimeTypeError, "scoped-var skip walks off the chain");
            return;
        }
        const ObjectRecord& env = heap_.at(nodePtr->object);
        if (index < 0 || index >= static_cast<int>(env.properties().size())) {
            halt(HaltReason::RuntimeTypeError, "scoped-var index out of range");
            return;
        }
        const auto& [name, pd] = env.properties()[index];
        acc = acc.join(nodePtr->linkLabel).join(env.structLabel);
        writeRegister(frame, regOf(0), pd.value.value, acc.join(pd.value.label).join(pc));
        finish();
        return;
    }

    case Opcode::PutScopedVar: {
        int index = static_cast<int>(ins.operands[0].num);
        int skip = static_cast<int>(ins.operands[1].num);
        LabeledValue value = readRegister(frame, regOf(2));
        Label acc = pc;
        const ScopeNode* nodePtr = frame.scope.get();
        while (skip-- > 0 && nodePtr) {
            acc = acc.join(nodePtr->linkLabel)
                      .join(heap_.at(nodePtr->object).structLabel);
            nodePtr = nodePtr->next.get();
        }
        if (!nodePtr) {
            halt(HaltReason::RuntimeTypeError, "scoped-var skip walks off the chain");
            return;
        }
        ObjectRecord& env = heap_.at(nodePtr->object);
        if (!env.activation || index < 0 ||
            index >= static_cast<int>(env.properties().size())) {
            halt(HaltReason::RuntimeTypeError, "put-scoped-var outside an activation slot");
            return;
        }
        // Deferred-star rule on the environment slot; environments are
        // invisible to the adversary so no halt here.
        auto& slot = const_cast<PropertyDescriptor&>(env.properties()[index].second);
        Label newLabel = value.label.join(acc);
        if (deferred() && !acc.leq(slot.value.label))
            newLabel = newLabel.withStar();
        slot.value = {value.value, deferred() ? newLabel : Label::bottom()};
        finish();
        return;
    }

    case Opcode::PushScope: {
        LabeledValue sv = readRegister(frame, regOf(0));
        if (!isLocation(sv.value)) {
            halt(HaltReason::RuntimeTypeError, "with-scope on a non-object");
            return;
        }
        Label linkLabel = pc.join(sv.label);
        if (deferred() && frame.scope && !pc.leq(frame.scope->linkLabel))
            linkLabel = linkLabel.withStar();
        frame.scope = pushScopeNode(
            frame.scope, ScopeNode{std::get<Location>(sv.value), linkLabel, nullptr});
        finish();
        return;
    }

    case Opcode::PopScope: {
        if (!frame.scope) {
            halt(HaltReason::RuntimeTypeError, "pop-scope on an empty chain");
            return;
        }
        if (deferred() && !pc.leq(frame.scope->linkLabel)) {
            halt(HaltReason::IfcScopeViolation,
                 "scope pop under a higher context than the link label");
            return;
        }
        frame.scope = frame.scope->next;
        finish();
        return;
    }

    case Opcode::JmpScope: {
        int count = static_cast<int>(ins.operands[0].num);
        while (count-- > 0) {
            if (!frame.scope) {
                halt(HaltReason::RuntimeTypeError, "jmp-scope on an empty chain");
                return;
            }
            if (deferred() && !pc.leq(frame.scope->linkLabel)) {
                halt(HaltReason::IfcScopeViolation,
                     "scope pop under a higher context than the link label");
                return;
            }
            frame.scope = frame.scope->next;
        }
        finishAt(static_cast<NodeId>(ins.operands[1].num));
        return;
    }

    case Opcode::Throw: {
        excValue_ = readRegister(frame, regOf(0));
        excIsTypeError_ = false;
        doThrow(node);
        return;
    }

    case Opcode::Catch: {
        if (!excValue_) {
            halt(HaltReason::RuntimeTypeError, "catch executed without a pending exception");
            return;
        }
        writeRegister(frame, regOf(0), excValue_->value, excValue_->label.join(pc));
        excValue_.reset();
        excIsTypeError_ = false;
        finish();
        return;
    }
    }
    halt(HaltReason::RuntimeTypeError, "unhandled opcode");
}

void Machine::checkInvariants() {
    // pc-stack labels are monotonically non-decreasing, bottom to top.
    for (size_t i = 0; i + 1 < pcStack_.size(); ++i)
        if (!pcStack_[i].label.leq(pcStack_[i + 1].label))
            throw ExecError("pc-stack monotonicity violated");
    // Every pc entry references a live frame.
    for (const PcEntry& entry : pcStack_) {
        bool live = false;
        for (const CallFrame& f : frames_)
            live = live || f.id == entry.frameId;
        if (!live)
            throw ExecError("pc-stack entry references a dead call frame");
    }
    // No star-bearing label is ever stored in an ordinary heap object.
    for (Location loc = 1; loc <= heap_.lastLocation(); ++loc) {
        const ObjectRecord& obj = heap_.at(loc);
        if (obj.activation)
            continue;
        if (obj.structLabel.star() || obj.protoLabel.star())
            throw ExecError("star-bearing structure label in the heap");
        for (auto& [name, pd] : obj.properties())
            if (pd.value.label.star())
                throw ExecError("star-bearing property value in the heap");
    }
    if (status_ == RunStatus::NormalEnd && !pcStack_.empty())
        throw ExecError("pc-stack not empty at normal end");
}

void Machine::traceStep(NodeId node, std::string_view what) {
    if (!config_.traceStream)
        return;
    const CallFrame& frame = frames_.back();
    *config_.traceStream << "b" << frame.blockIndex << ":" << node << " " << what
                         << " pc=" << registry_->format(pcLabel())
                         << " depth=" << pcStack_.size() << "\n";
}

std::string Machine::dumpHeap(Label observer) const {
    std::ostringstream out;
    auto formatValue = [&](const LabeledValue& lv) {
        std::string body = lv.label.visibleTo(observer) ? valueToDisplayString(lv.value)
                                                        : std::string("<opaque>");
        return body + "^" + registry_->format(lv.label);
    };
    for (Location loc = 1; loc <= heap_.lastLocation(); ++loc) {
        const ObjectRecord& obj = heap_.at(loc);
        out << "@" << loc;
        if (obj.activation)
            out << " activation";
        else if (obj.isFunction())
            out << " function";
        else
            out << " object";
        out << " ls=" << registry_->format(obj.structLabel);
        if (obj.protoRef)
            out << " proto=@" << *obj.protoRef << "^" << registry_->format(obj.protoLabel);
        out << " {";
        bool first = true;
        for (auto& [name, pd] : obj.properties()) {
            if (!first)
                out << ", ";
            first = false;
            out << name << ": ";
            if (pd.isAccessor()) {
                out << "accessor(";
                if (pd.accessor->getter)
                    out << "get @" << *pd.accessor->getter;
                if (pd.accessor->setter)
                    out << (pd.accessor->getter ? " " : "") << "set @" << *pd.accessor->setter;
                out << ")^" << registry_->format(pd.value.label);
            } else {
                out << formatValue(pd.value);
            }
        }
        out << "}\n";
    }
    return out.str();
}

std::string Machine::dumpState(Label observer) const {
    std::ostringstream out;
    out << "status: ";
    switch (status_) {
    case RunStatus::Running: out << "running"; break;
    case RunStatus::NormalEnd: out << "normal-end"; break;
    case RunStatus::Halted:
        out << "halted(" << haltReasonName(*haltReason_) << ")";
        break;
    }
    out << "\n";
    std::string gammaBody = gamma_.label.visibleTo(observer)
                                ? valueToDisplayString(gamma_.value)
                                : std::string("<opaque>");
    out << "gamma: " << gammaBody << "^" << registry_->format(gamma_.label) << "\n";
    out << dumpHeap(observer);
    return out.str();
}

} // namespace ifcvm
