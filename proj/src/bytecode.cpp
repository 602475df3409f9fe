#include "ifcvm/bytecode.hpp"

#include <array>
#include <utility>

namespace ifcvm {

namespace {

struct OpInfo {
    Opcode op;
    std::string_view name;
    std::string_view sig;
};

// Signature letters: r register, n int, b bool, i ident, p prop, o offset,
// P prim tag, x register-or-immediate.
constexpr std::array<OpInfo, 37> kOps{{
    {Opcode::Prim, "prim", "Prxx"},        // unary variants take 3 operands
    {Opcode::Mov, "mov", "rx"},
    {Opcode::JFalse, "jfalse", "ro"},
    {Opcode::LoopIfLess, "loop-if-less", "rro"},
    {Opcode::Jmp, "jmp", "o"},
    {Opcode::TypeOf, "typeof", "rr"},
    {Opcode::InstanceOf, "instanceof", "rrr"},
    {Opcode::Enter, "enter", ""},
    {Opcode::Ret, "ret", "r"},
    {Opcode::End, "end", "r"},
    {Opcode::Call, "call", "rn"},
    {Opcode::CallPutResult, "call-put-result", "r"},
    {Opcode::CallEval, "call-eval", "rn"},
    {Opcode::Construct, "construct", "rn"},
    {Opcode::CreateArguments, "create-arguments", "r"},
    {Opcode::CreateActivation, "create-activation", "r"},
    {Opcode::CreateThis, "create-this", "r"},
    {Opcode::NewObject, "new-object", "r"},
    {Opcode::NewFunc, "new-func", "rn"},
    {Opcode::GetById, "get-by-id", "rrp"},
    {Opcode::PutById, "put-by-id", "rprb"},
    {Opcode::DelById, "del-by-id", "rrp"},
    {Opcode::PutGetterSetter, "put-getter-setter", "rprr"},
    {Opcode::GetPnames, "get-pnames", "rrrro"},
    {Opcode::NextPname, "next-pname", "rrrrro"},
    {Opcode::Resolve, "resolve", "ri"},
    {Opcode::ResolveSkip, "resolve-skip", "rin"},
    {Opcode::ResolveGlobal, "resolve-global", "ri"},
    {Opcode::ResolveBase, "resolve-base", "rib"},
    {Opcode::ResolveWithBase, "resolve-with-base", "rri"},
    {Opcode::GetScopedVar, "get-scoped-var", "rnn"},
    {Opcode::PutScopedVar, "put-scoped-var", "nnr"},
    {Opcode::PushScope, "push-scope", "r"},
    {Opcode::PopScope, "pop-scope", ""},
    {Opcode::JmpScope, "jmp-scope", "no"},
    {Opcode::Throw, "throw", "r"},
    {Opcode::Catch, "catch", "r"},
}};

constexpr std::array<std::pair<PrimOp, std::string_view>, kPrimOpCount> kPrimOps{{
    {PrimOp::Add, "add"}, {PrimOp::Sub, "sub"}, {PrimOp::Mul, "mul"},
    {PrimOp::Div, "div"}, {PrimOp::Mod, "mod"},
    {PrimOp::Eq, "eq"}, {PrimOp::Neq, "neq"},
    {PrimOp::StrictEq, "stricteq"}, {PrimOp::NStrictEq, "nstricteq"},
    {PrimOp::Less, "less"}, {PrimOp::LessEq, "lesseq"},
    {PrimOp::Greater, "greater"}, {PrimOp::GreaterEq, "greatereq"},
    {PrimOp::And, "and"}, {PrimOp::Or, "or"}, {PrimOp::Xor, "xor"},
    {PrimOp::LShift, "lshift"}, {PrimOp::RShift, "rshift"}, {PrimOp::URShift, "urshift"},
    {PrimOp::BitAnd, "bitand"}, {PrimOp::BitOr, "bitor"}, {PrimOp::BitXor, "bitxor"},
    {PrimOp::Not, "not"}, {PrimOp::Negate, "negate"}, {PrimOp::BitNot, "bitnot"},
    {PrimOp::Inc, "inc"}, {PrimOp::Dec, "dec"}, {PrimOp::ToNumber, "to-number"},
    {PrimOp::IsUndefined, "is-undefined"}, {PrimOp::IsBoolean, "is-boolean"},
    {PrimOp::IsNumber, "is-number"}, {PrimOp::IsString, "is-string"},
    {PrimOp::IsObject, "is-object"}, {PrimOp::IsFunction, "is-function"},
}};

} // namespace

bool primOpIsUnary(PrimOp op) {
    return static_cast<int>(op) >= static_cast<int>(PrimOp::Not);
}

std::string_view primOpName(PrimOp op) {
    for (auto& [p, n] : kPrimOps)
        if (p == op)
            return n;
    return "?";
}

std::optional<PrimOp> primOpFromName(std::string_view name) {
    for (auto& [p, n] : kPrimOps)
        if (n == name)
            return p;
    return std::nullopt;
}

std::string_view opcodeName(Opcode op) {
    return kOps[static_cast<size_t>(op)].name;
}

std::optional<Opcode> opcodeFromName(std::string_view name) {
    for (auto& info : kOps)
        if (info.name == name)
            return info.op;
    return std::nullopt;
}

std::string_view opcodeSignature(Opcode op) {
    return kOps[static_cast<size_t>(op)].sig;
}

bool opcodeMayThrow(Opcode op) {
    switch (op) {
    case Opcode::Throw:
    case Opcode::Call:
    case Opcode::CallEval:
    case Opcode::Construct:
    case Opcode::Resolve:
    case Opcode::ResolveSkip:
    case Opcode::ResolveGlobal:
    case Opcode::ResolveBase:
    case Opcode::ResolveWithBase:
    case Opcode::GetById:
    case Opcode::PutById:
    case Opcode::DelById:
        return true;
    default:
        return false;
    }
}

std::string Diagnostic::str() const {
    std::string out;
    if (blockIndex >= 0)
        out += "block " + std::to_string(blockIndex);
    if (instructionIndex >= 0)
        out += " @" + std::to_string(instructionIndex);
    if (!out.empty())
        out += ": ";
    return out + message;
}

namespace {

bool operandMatches(char sigChar, const Operand& op) {
    switch (sigChar) {
    case 'r': return op.kind == OperandKind::Register;
    case 'n': return op.kind == OperandKind::Int;
    case 'b': return op.kind == OperandKind::Bool;
    case 'i': return op.kind == OperandKind::Ident;
    case 'p': return op.kind == OperandKind::Prop;
    case 'o': return op.kind == OperandKind::Offset;
    case 'P': return op.kind == OperandKind::Ident && primOpFromName(op.text).has_value();
    case 'x':
        return op.kind == OperandKind::Register || op.kind == OperandKind::Int ||
               op.kind == OperandKind::Bool || op.kind == OperandKind::Ident;
    default: return false;
    }
}

bool isTerminal(const Instruction& ins) {
    switch (ins.opcode) {
    case Opcode::Ret:
    case Opcode::End:
    case Opcode::Jmp:
    case Opcode::JmpScope:
    case Opcode::Throw:
        return true;
    default:
        return false;
    }
}

} // namespace

std::vector<Diagnostic> validate(const CodeBlock& block, const Program& program, int blockIndex) {
    std::vector<Diagnostic> diags;
    auto emit = [&](int ins, std::string msg) {
        diags.push_back({std::move(msg), blockIndex, ins});
    };

    const int n = static_cast<int>(block.instructions.size());
    if (n == 0) {
        emit(-1, "empty code block");
        return diags;
    }

    for (int i = 0; i < n; ++i) {
        const Instruction& ins = block.instructions[i];
        std::string_view sig = opcodeSignature(ins.opcode);
        size_t expected = sig.size();
        if (ins.opcode == Opcode::Prim && !ins.operands.empty() &&
            ins.operands[0].kind == OperandKind::Ident) {
            if (auto p = primOpFromName(ins.operands[0].text); p && primOpIsUnary(*p))
                expected = 3;
        }
        if (ins.operands.size() != expected) {
            emit(i, std::string(opcodeName(ins.opcode)) + ": expected " +
                        std::to_string(expected) + " operands, got " +
                        std::to_string(ins.operands.size()));
            continue;
        }
        for (size_t k = 0; k < ins.operands.size(); ++k) {
            if (!operandMatches(sig[k], ins.operands[k])) {
                emit(i, std::string(opcodeName(ins.opcode)) + ": operand " +
                            std::to_string(k + 1) + " has wrong kind");
                continue;
            }
            const Operand& op = ins.operands[k];
            if (op.kind == OperandKind::Register &&
                (op.num < 0 || op.num >= block.registerCount))
                emit(i, "register r" + std::to_string(op.num) + " out of range (regs=" +
                            std::to_string(block.registerCount) + ")");
            if (op.kind == OperandKind::Offset && (op.num < 0 || op.num >= n))
                emit(i, "jump target " + std::to_string(op.num) + " out of range");
        }
        if (ins.opcode == Opcode::NewFunc && ins.operands.size() == 2 &&
            ins.operands[1].kind == OperandKind::Int) {
            int64_t fi = ins.operands[1].num;
            if (fi < 0 || fi >= static_cast<int64_t>(block.functionSources.size()))
                emit(i, "funcIndex " + std::to_string(fi) + " out of range");
            else if (block.functionSources[fi] < 0 ||
                     block.functionSources[fi] >= static_cast<int>(program.blocks.size()))
                emit(i, "functionSources entry points outside the program");
        }
    }

    if (!isTerminal(block.instructions[n - 1]))
        emit(n - 1, "control can run off the end of the block");

    for (const ExceptionRange& range : block.exceptionTable) {
        if (range.start < 0 || range.end > n || range.start >= range.end)
            emit(-1, "exception range [" + std::to_string(range.start) + "," +
                         std::to_string(range.end) + ") malformed");
        if (range.handler < 0 || range.handler >= n ||
            block.instructions[range.handler].opcode != Opcode::Catch)
            emit(-1, "exception handler " + std::to_string(range.handler) +
                         " does not point at a catch instruction");
        if (range.scopeDepth < 0)
            emit(-1, "negative handler scope depth");
    }

    if (block.argCount < 0 || block.argCount > block.registerCount)
        emit(-1, "argCount exceeds registerCount");

    return diags;
}

std::vector<Diagnostic> validate(const Program& program) {
    std::vector<Diagnostic> diags;
    if (program.blocks.empty()) {
        diags.push_back({"program has no entry block", -1, -1});
        return diags;
    }
    for (size_t i = 0; i < program.blocks.size(); ++i) {
        auto d = validate(program.blocks[i], program, static_cast<int>(i));
        diags.insert(diags.end(), d.begin(), d.end());
    }
    return diags;
}

} // namespace ifcvm
