#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ifcvm {

enum class Opcode : uint8_t {
    Prim,
    Mov,
    JFalse,
    LoopIfLess,
    Jmp,
    TypeOf,
    InstanceOf,
    Enter,
    Ret,
    End,
    Call,
    CallPutResult,
    CallEval,
    Construct,
    CreateArguments,
    CreateActivation,
    CreateThis,
    NewObject,
    NewFunc,
    GetById,
    PutById,
    DelById,
    PutGetterSetter,
    GetPnames,
    NextPname,
    Resolve,
    ResolveSkip,
    ResolveGlobal,
    ResolveBase,
    ResolveWithBase,
    GetScopedVar,
    PutScopedVar,
    PushScope,
    PopScope,
    JmpScope,
    Throw,
    Catch,
};

// The 34 primitive operator tags folded behind the `prim` opcode.
enum class PrimOp : uint8_t {
    // binary (22)
    Add, Sub, Mul, Div, Mod,
    Eq, Neq, StrictEq, NStrictEq,
    Less, LessEq, Greater, GreaterEq,
    And, Or, Xor,
    LShift, RShift, URShift,
    BitAnd, BitOr, BitXor,
    // unary (12)
    Not, Negate, BitNot, Inc, Dec, ToNumber,
    IsUndefined, IsBoolean, IsNumber, IsString, IsObject, IsFunction,
};

constexpr int kPrimOpCount = 34;
bool primOpIsUnary(PrimOp op);
std::string_view primOpName(PrimOp op);
std::optional<PrimOp> primOpFromName(std::string_view name);

std::string_view opcodeName(Opcode op);
std::optional<Opcode> opcodeFromName(std::string_view name);

enum class OperandKind : uint8_t {
    Register,   // r<k>
    Int,        // n:<int>
    Bool,       // b:true|false
    Ident,      // id:<name> or id:"quoted"
    Prop,       // prop:<name> or prop:"quoted"
    Offset,     // @label in text; absolute instruction index once parsed
};

struct Operand {
    OperandKind kind;
    int64_t num = 0;        // Register / Int / Offset payload
    std::string text;       // Ident / Prop payload
    bool flag = false;      // Bool payload

    static Operand reg(int64_t r) { return {OperandKind::Register, r, {}, false}; }
    static Operand integer(int64_t n) { return {OperandKind::Int, n, {}, false}; }
    static Operand boolean(bool b) { return {OperandKind::Bool, 0, {}, b}; }
    static Operand ident(std::string s) { return {OperandKind::Ident, 0, std::move(s), false}; }
    static Operand prop(std::string s) { return {OperandKind::Prop, 0, std::move(s), false}; }
    static Operand offset(int64_t target) { return {OperandKind::Offset, target, {}, false}; }

    bool operator==(const Operand&) const = default;
};

struct Instruction {
    Opcode opcode;
    std::vector<Operand> operands;

    bool operator==(const Instruction&) const = default;
};

// Exception table entry: instructions in [start, end) are covered by the
// handler at `handler` (a catch instruction). `scopeDepth` is the number of
// scope-chain nodes pushed inside the protected region that must be popped
// when the handler is entered.
struct ExceptionRange {
    int start = 0;
    int end = 0;
    int handler = 0;
    int scopeDepth = 0;

    bool operator==(const ExceptionRange&) const = default;
};

struct CodeBlock {
    std::string name;
    std::vector<Instruction> instructions;
    int registerCount = 0;
    int argCount = 0;
    bool strictMode = false;
    std::string domain;                 // origin domain for label seeding; empty = none
    std::vector<ExceptionRange> exceptionTable;
    std::vector<int> functionSources;   // block indices for new-func funcIndex operands
    std::vector<std::string> activationVars;  // slot layout for create-activation
    std::vector<std::string> declaredVars;    // hoisted by opCallEval for eval blocks
    // (name, funcIndex into functionSources) hoisted by opCallEval.
    std::vector<std::pair<std::string, int>> declaredFuncs;

    bool operator==(const CodeBlock&) const = default;
};

struct Program {
    std::vector<CodeBlock> blocks;      // entry block first

    bool operator==(const Program&) const = default;
};

// Per-opcode operand signature, used by the parser and validator.
// Signature letters: r register, n int, b bool, i ident, p prop, o offset,
// plus 'P' for the prim operator tag and 'x' for a register-or-immediate
// source (mov and prim sources accept n:/b:/id: immediates).
std::string_view opcodeSignature(Opcode op);

struct Diagnostic {
    std::string message;
    int blockIndex = -1;
    int instructionIndex = -1;

    std::string str() const;
};

// Structural validation of one block: operand arity/kinds, register ranges,
// jump targets, exception-table sanity, terminal last instruction.
std::vector<Diagnostic> validate(const CodeBlock& block, const Program& program, int blockIndex);
std::vector<Diagnostic> validate(const Program& program);

// Instructions that may raise an exception; drives exception edges in the
// CFG. Conservative, per the rules: unknown code behind calls may throw.
bool opcodeMayThrow(Opcode op);

} // namespace ifcvm
