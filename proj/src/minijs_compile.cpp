#include "ifcvm/minijs.hpp"

#include <cassert>
#include <functional>
#include <map>
#include <set>

namespace ifcvm::minijs {

namespace {

struct Binding {
    enum Kind { Reg, Slot } kind = Reg;
    int index = 0;
};

struct FnInfo {
    std::map<std::string, Binding> bindings;
    bool hasActivation = false;
};

struct CompScope {
    enum Type { Fn, WithBarrier, EvalTop, EntryTop } type;
    FnInfo* fn = nullptr;
};

struct Ref {
    enum Kind { Register, Scoped, Dynamic, Global } kind;
    int reg = -1;
    int index = 0;
    int skip = 0;
};

// Hoisting facts for one function body (does not descend into nested
// functions).
struct HoistInfo {
    std::vector<std::string> varNames;
    std::vector<std::string> catchNames;
    std::vector<Node*> funcDecls;
    bool usesThis = false;
    bool usesArguments = false;
    bool hasNestedFunctions = false;
    bool strict = false;
};

void scanExpr(Node* node, HoistInfo& info);

void scanStmt(Node* node, HoistInfo& info) {
    if (!node)
        return;
    switch (node->kind) {
    case NodeKind::VarDecl:
        info.varNames.push_back(node->text);
        if (!node->kids.empty())
            scanExpr(node->kids[0].get(), info);
        return;
    case NodeKind::FunctionDecl:
        info.funcDecls.push_back(node);
        info.hasNestedFunctions = true;
        return;
    case NodeKind::ForIn:
        if (node->flag)
            info.varNames.push_back(node->text);
        scanExpr(node->kids[0].get(), info);
        scanStmt(node->kids[1].get(), info);
        return;
    case NodeKind::Try:
        scanStmt(node->kids[0].get(), info);
        if (node->kids[1]) {
            info.catchNames.push_back(node->text);
            scanStmt(node->kids[1].get(), info);
        }
        if (node->kids[2])
            scanStmt(node->kids[2].get(), info);
        return;
    case NodeKind::Block:
    case NodeKind::Program:
        for (auto& kid : node->kids)
            scanStmt(kid.get(), info);
        return;
    case NodeKind::If:
        scanExpr(node->kids[0].get(), info);
        scanStmt(node->kids[1].get(), info);
        if (node->kids.size() > 2)
            scanStmt(node->kids[2].get(), info);
        return;
    case NodeKind::While:
        scanExpr(node->kids[0].get(), info);
        scanStmt(node->kids[1].get(), info);
        return;
    case NodeKind::With:
        scanExpr(node->kids[0].get(), info);
        scanStmt(node->kids[1].get(), info);
        return;
    case NodeKind::Return:
    case NodeKind::Throw:
    case NodeKind::ExprStmt:
        if (!node->kids.empty())
            scanExpr(node->kids[0].get(), info);
        return;
    case NodeKind::Break:
    case NodeKind::Continue:
        return;
    default:
        scanExpr(node, info);
        return;
    }
}

void scanExpr(Node* node, HoistInfo& info) {
    if (!node)
        return;
    switch (node->kind) {
    case NodeKind::This:
        info.usesThis = true;
        return;
    case NodeKind::Ident:
        if (node->text == "arguments")
            info.usesArguments = true;
        return;
    case NodeKind::FunctionExpr:
        info.hasNestedFunctions = true;
        return; // nested body scanned when the nested function compiles
    case NodeKind::ObjectLit:
        for (auto& prop : node->props) {
            if (prop.isGetter)
                info.hasNestedFunctions = true;
            else
                scanExpr(prop.value.get(), info);
        }
        return;
    default:
        for (auto& kid : node->kids)
            scanExpr(kid.get(), info);
        return;
    }
}

struct CleanupEntry {
    enum Type { FinallyE, WithE } type;
    const Node* finallyBlock = nullptr;
};

struct Jump {
    int instruction;
    size_t operand;
};

struct LoopCtx {
    size_t cleanupDepth;
    std::vector<Jump> breakJumps;
    std::vector<Jump> continueJumps;
};

struct Compiler {
    Program& program;
    const CompileOptions& options;
    std::vector<CompScope> scopes;
    int anonCounter = 0;
    std::set<std::string> usedNames;

    Compiler(Program& p, const CompileOptions& o) : program(p), options(o) {}

    std::string uniqueName(std::string name) {
        while (usedNames.count(name))
            name += "_" + std::to_string(++anonCounter);
        usedNames.insert(name);
        return name;
    }

    int compileFunction(const std::string& name, const std::vector<std::string>& params,
                        const std::vector<NodePtr>& body, CompScope::Type topType,
                        bool forcedStrict);
};

struct FnCompiler {
    Compiler& shared;
    CodeBlock block;
    int blockIndex;
    CompScope::Type topType; // Fn for functions, EntryTop/EvalTop otherwise
    FnInfo info;
    HoistInfo hoist;

    int undefReg = -1, retReg = -1, thisReg = -1, argsReg = -1, completionReg = -1;
    int tempBase = 0, tempDepth = 0, maxTempDepth = 0, maxArgc = 0;
    int withDepth = 0;
    std::vector<CleanupEntry> cleanupStack;
    std::vector<LoopCtx> loops;
    struct ArgFixup {
        int instruction;
        size_t operand;
        int argIndex;
        int argc;
    };
    std::vector<ArgFixup> argFixups;

    bool entryLike() const {
        return topType == CompScope::EntryTop || topType == CompScope::EvalTop;
    }
    bool strict() const { return block.strictMode; }

    // --- emission --------------------------------------------------------

    int emit(Opcode op, std::vector<Operand> operands) {
        block.instructions.push_back({op, std::move(operands)});
        return static_cast<int>(block.instructions.size()) - 1;
    }

    int here() const { return static_cast<int>(block.instructions.size()); }

    void patch(Jump jump, int target) {
        block.instructions[jump.instruction].operands[jump.operand].num = target;
    }

    Jump jumpOperand(int instruction, size_t operand) { return {instruction, operand}; }

    int allocTemp() {
        int reg = tempBase + tempDepth++;
        if (tempDepth > maxTempDepth)
            maxTempDepth = tempDepth;
        return reg;
    }

    int tempMark() const { return tempDepth; }
    void releaseTo(int mark) { tempDepth = mark; }
    bool isTemp(int reg) const { return reg >= tempBase; }

    [[noreturn]] void unsupported(const std::string& what, const Node& node) {
        throw UnsupportedError(what + " (line " + std::to_string(node.line) + ")");
    }

    // --- name resolution --------------------------------------------------

    Ref resolveName(const std::string& name) {
        int skip = 0;
        bool crossedFn = false;
        for (auto it = shared.scopes.rbegin(); it != shared.scopes.rend(); ++it) {
            switch (it->type) {
            case CompScope::WithBarrier:
                return {Ref::Dynamic};
            case CompScope::Fn: {
                auto found = it->fn->bindings.find(name);
                if (found != it->fn->bindings.end()) {
                    if (found->second.kind == Binding::Reg) {
                        if (crossedFn)
                            return {Ref::Dynamic}; // unreachable register binding
                        return {Ref::Register, found->second.index};
                    }
                    return {Ref::Scoped, -1, found->second.index, skip};
                }
                skip += it->fn->hasActivation ? 1 : 0;
                crossedFn = true;
                break;
            }
            case CompScope::EvalTop:
                if (auto found = it->fn->bindings.find(name);
                    found != it->fn->bindings.end() && !crossedFn)
                    return {Ref::Register, found->second.index};
                return {Ref::Dynamic};
            case CompScope::EntryTop:
                if (auto found = it->fn->bindings.find(name);
                    found != it->fn->bindings.end() && !crossedFn)
                    return {Ref::Register, found->second.index};
                return {Ref::Global};
            }
        }
        return {Ref::Global};
    }

    int emitNameRead(const std::string& name, const Node& at) {
        Ref ref = resolveName(name);
        switch (ref.kind) {
        case Ref::Register:
            return ref.reg;
        case Ref::Scoped: {
            int t = allocTemp();
            emit(Opcode::GetScopedVar, {Operand::reg(t), Operand::integer(ref.index),
                                        Operand::integer(ref.skip)});
            return t;
        }
        case Ref::Dynamic: {
            int t = allocTemp();
            emit(Opcode::Resolve, {Operand::reg(t), Operand::ident(name)});
            return t;
        }
        case Ref::Global: {
            int t = allocTemp();
            // Provably-global reads at the top level go through the global
            // object directly; inside functions the chain walk applies.
            if (topType == CompScope::EntryTop)
                emit(Opcode::ResolveGlobal, {Operand::reg(t), Operand::ident(name)});
            else
                emit(Opcode::Resolve, {Operand::reg(t), Operand::ident(name)});
            return t;
        }
        }
        unsupported("name reference", at);
    }

    void emitNameWrite(const std::string& name, int valueReg, const Node& at) {
        Ref ref = resolveName(name);
        switch (ref.kind) {
        case Ref::Register:
            if (ref.reg != valueReg)
                emit(Opcode::Mov, {Operand::reg(ref.reg), Operand::reg(valueReg)});
            return;
        case Ref::Scoped:
            emit(Opcode::PutScopedVar, {Operand::integer(ref.index),
                                        Operand::integer(ref.skip), Operand::reg(valueReg)});
            return;
        case Ref::Dynamic:
        case Ref::Global: {
            int mark = tempMark();
            int base = allocTemp();
            emit(Opcode::ResolveBase, {Operand::reg(base), Operand::ident(name),
                                       Operand::boolean(strict())});
            emit(Opcode::PutById, {Operand::reg(base), Operand::prop(name),
                                   Operand::reg(valueReg), Operand::boolean(false)});
            releaseTo(mark);
            return;
        }
        }
        unsupported("assignment target", at);
    }

    // --- expressions ------------------------------------------------------

    std::optional<PrimOp> binaryPrim(const std::string& op) {
        static const std::map<std::string, PrimOp> table = {
            {"+", PrimOp::Add}, {"-", PrimOp::Sub}, {"*", PrimOp::Mul},
            {"/", PrimOp::Div}, {"%", PrimOp::Mod}, {"==", PrimOp::Eq},
            {"!=", PrimOp::Neq}, {"===", PrimOp::StrictEq}, {"!==", PrimOp::NStrictEq},
            {"<", PrimOp::Less}, {"<=", PrimOp::LessEq}, {">", PrimOp::Greater},
            {">=", PrimOp::GreaterEq}, {"&", PrimOp::BitAnd}, {"|", PrimOp::BitOr},
            {"^", PrimOp::BitXor}, {"<<", PrimOp::LShift}, {">>", PrimOp::RShift},
            {">>>", PrimOp::URShift},
        };
        auto it = table.find(op);
        if (it == table.end())
            return std::nullopt;
        return it->second;
    }

    int compileExpr(const NodePtr& node) {
        switch (node->kind) {
        case NodeKind::NumberLit: {
            int t = allocTemp();
            emit(Opcode::Mov, {Operand::reg(t), Operand::integer(node->num)});
            return t;
        }
        case NodeKind::StringLit: {
            int t = allocTemp();
            emit(Opcode::Mov, {Operand::reg(t), Operand::ident(node->text)});
            return t;
        }
        case NodeKind::BoolLit: {
            int t = allocTemp();
            emit(Opcode::Mov, {Operand::reg(t), Operand::boolean(node->flag)});
            return t;
        }
        case NodeKind::UndefinedLit:
            return undefReg;
        case NodeKind::This:
            if (thisReg < 0)
                unsupported("this outside a function", *node);
            return thisReg;
        case NodeKind::Ident:
            if (node->text == "arguments" && argsReg >= 0)
                return argsReg;
            return emitNameRead(node->text, *node);
        case NodeKind::Assign: {
            const NodePtr& target = node->kids[0];
            if (target->kind == NodeKind::Ident) {
                int v = compileExpr(node->kids[1]);
                emitNameWrite(target->text, v, *node);
                return v;
            }
            // Member target: evaluate the base first, then the value.
            int mark = tempMark();
            int base = compileExpr(target->kids[0]);
            int v = compileExpr(node->kids[1]);
            emit(Opcode::PutById, {Operand::reg(base), Operand::prop(target->text),
                                   Operand::reg(v), Operand::boolean(false)});
            if (!isTemp(v)) {
                releaseTo(mark);
                return v;
            }
            releaseTo(mark);
            int out = allocTemp();
            if (out != v)
                emit(Opcode::Mov, {Operand::reg(out), Operand::reg(v)});
            return out;
        }
        case NodeKind::Binary: {
            if (node->text == "instanceof") {
                int mark = tempMark();
                int value = compileExpr(node->kids[0]);
                int ctor = compileExpr(node->kids[1]);
                int proto = allocTemp();
                emit(Opcode::GetById, {Operand::reg(proto), Operand::reg(ctor),
                                       Operand::prop("prototype")});
                releaseTo(mark);
                int dst = allocTemp();
                emit(Opcode::InstanceOf,
                     {Operand::reg(dst), Operand::reg(value), Operand::reg(proto)});
                return dst;
            }
            auto tag = binaryPrim(node->text);
            if (!tag)
                unsupported("operator " + node->text, *node);
            int mark = tempMark();
            int lhs = compileExpr(node->kids[0]);
            int rhs = compileExpr(node->kids[1]);
            releaseTo(mark);
            int dst = allocTemp();
            emit(Opcode::Prim,
                 {Operand::ident(std::string(primOpName(*tag))), Operand::reg(dst),
                  Operand::reg(lhs), Operand::reg(rhs)});
            return dst;
        }
        case NodeKind::Logical: {
            int dst = allocTemp();
            int mark = tempMark();
            int lhs = compileExpr(node->kids[0]);
            if (lhs != dst)
                emit(Opcode::Mov, {Operand::reg(dst), Operand::reg(lhs)});
            releaseTo(mark);
            Jump skip{-1, 0};
            if (node->text == "&&") {
                int j = emit(Opcode::JFalse, {Operand::reg(dst), Operand::offset(-1)});
                skip = jumpOperand(j, 1);
            } else {
                int inverted = allocTemp();
                emit(Opcode::Prim, {Operand::ident("not"), Operand::reg(inverted),
                                    Operand::reg(dst)});
                int j = emit(Opcode::JFalse, {Operand::reg(inverted), Operand::offset(-1)});
                releaseTo(mark);
                skip = jumpOperand(j, 1);
            }
            int rhs = compileExpr(node->kids[1]);
            if (rhs != dst)
                emit(Opcode::Mov, {Operand::reg(dst), Operand::reg(rhs)});
            releaseTo(mark);
            patch(skip, here());
            return dst;
        }
        case NodeKind::Unary: {
            if (node->text == "typeof") {
                int mark = tempMark();
                int src = compileExpr(node->kids[0]);
                releaseTo(mark);
                int dst = allocTemp();
                emit(Opcode::TypeOf, {Operand::reg(dst), Operand::reg(src)});
                return dst;
            }
            PrimOp tag = node->text == "!"   ? PrimOp::Not
                         : node->text == "-" ? PrimOp::Negate
                                             : PrimOp::BitNot;
            int mark = tempMark();
            int src = compileExpr(node->kids[0]);
            releaseTo(mark);
            int dst = allocTemp();
            emit(Opcode::Prim, {Operand::ident(std::string(primOpName(tag))),
                                Operand::reg(dst), Operand::reg(src)});
            return dst;
        }
        case NodeKind::Member: {
            int mark = tempMark();
            int base = compileExpr(node->kids[0]);
            releaseTo(mark);
            int dst = allocTemp();
            emit(Opcode::GetById,
                 {Operand::reg(dst), Operand::reg(base), Operand::prop(node->text)});
            return dst;
        }
        case NodeKind::Delete: {
            const NodePtr& member = node->kids[0];
            int mark = tempMark();
            int base = compileExpr(member->kids[0]);
            releaseTo(mark);
            int dst = allocTemp();
            emit(Opcode::DelById,
                 {Operand::reg(dst), Operand::reg(base), Operand::prop(member->text)});
            return dst;
        }
        case NodeKind::Call:
        case NodeKind::New:
            return compileCall(node);
        case NodeKind::ObjectLit: {
            int obj = allocTemp();
            emit(Opcode::NewObject, {Operand::reg(obj)});
            for (const ObjectProp& prop : node->props) {
                int mark = tempMark();
                if (prop.isGetter) {
                    int fn = compileFunctionExpr(prop.value, "get_" + prop.name);
                    emit(Opcode::PutGetterSetter,
                         {Operand::reg(obj), Operand::prop(prop.name), Operand::reg(fn),
                          Operand::reg(undefReg)});
                } else {
                    int v = compileExpr(prop.value);
                    emit(Opcode::PutById, {Operand::reg(obj), Operand::prop(prop.name),
                                           Operand::reg(v), Operand::boolean(true)});
                }
                releaseTo(mark);
            }
            return obj;
        }
        case NodeKind::FunctionExpr:
            return compileFunctionExpr(node, node->text.empty()
                                                 ? "fn" + std::to_string(++shared.anonCounter)
                                                 : node->text);
        default:
            unsupported("expression", *node);
        }
    }

    int compileFunctionExpr(const NodePtr& node, const std::string& name) {
        int childBlock = shared.compileFunction(block.name + "." + name, node->params,
                                                node->kids, CompScope::Fn, strict());
        int funcIndex = static_cast<int>(block.functionSources.size());
        block.functionSources.push_back(childBlock);
        int dst = allocTemp();
        emit(Opcode::NewFunc, {Operand::reg(dst), Operand::integer(funcIndex)});
        return dst;
    }

    int compileCall(const NodePtr& node) {
        bool isNew = node->kind == NodeKind::New;
        const NodePtr& callee = node->kids[0];
        int argc = static_cast<int>(node->kids.size()) - 1;
        maxArgc = std::max(maxArgc, argc);

        int mark = tempMark();
        bool isEval = false;
        int funcReg;
        if (!isNew && callee->kind == NodeKind::Ident) {
            if (callee->text == "eval") {
                isEval = true;
                funcReg = allocTemp();
                emit(Opcode::Resolve, {Operand::reg(funcReg), Operand::ident("eval")});
            } else if (resolveName(callee->text).kind == Ref::Dynamic) {
                // Calls of bare names under a with-scope resolve base and
                // function together.
                int base = allocTemp();
                funcReg = allocTemp();
                emit(Opcode::ResolveWithBase, {Operand::reg(base), Operand::reg(funcReg),
                                               Operand::ident(callee->text)});
            } else {
                funcReg = compileExpr(callee);
            }
        } else {
            funcReg = compileExpr(callee);
        }

        std::vector<int> argRegs;
        for (int i = 0; i < argc; ++i)
            argRegs.push_back(compileExpr(node->kids[1 + i]));
        // Move arguments into the top-of-frame argument region (registers
        // [R-argc, R)); the actual indices are fixed up once R is known.
        for (int i = 0; i < argc; ++i) {
            int ins = emit(Opcode::Mov, {Operand::reg(-1), Operand::reg(argRegs[i])});
            argFixups.push_back({ins, 0, i, argc});
        }
        Opcode op = isNew ? Opcode::Construct : (isEval ? Opcode::CallEval : Opcode::Call);
        emit(op, {Operand::reg(funcReg), Operand::integer(argc)});
        releaseTo(mark);
        int dst = allocTemp();
        emit(Opcode::CallPutResult, {Operand::reg(dst)});
        return dst;
    }

    // --- statements -------------------------------------------------------

    void compileStatements(const std::vector<NodePtr>& stmts) {
        for (const NodePtr& stmt : stmts)
            compileStatement(stmt);
    }

    void compileStatement(const NodePtr& node) {
        int mark = tempMark();
        switch (node->kind) {
        case NodeKind::Block:
            compileStatements(node->kids);
            break;
        case NodeKind::VarDecl:
            if (!node->kids.empty()) {
                int v = compileExpr(node->kids[0]);
                emitNameWrite(node->text, v, *node);
            }
            break;
        case NodeKind::ExprStmt:
            compileExpr(node->kids[0]);
            break;
        case NodeKind::FunctionDecl:
            // Hoisted separately; nothing to emit in place.
            break;
        case NodeKind::If: {
            int cmark = tempMark();
            int cond = compileExpr(node->kids[0]);
            int j = emit(Opcode::JFalse, {Operand::reg(cond), Operand::offset(-1)});
            releaseTo(cmark);
            compileStatement(node->kids[1]);
            if (node->kids.size() > 2) {
                int jEnd = emit(Opcode::Jmp, {Operand::offset(-1)});
                patch(jumpOperand(j, 1), here());
                compileStatement(node->kids[2]);
                patch(jumpOperand(jEnd, 0), here());
            } else {
                patch(jumpOperand(j, 1), here());
            }
            break;
        }
        case NodeKind::While:
            compileWhile(node);
            break;
        case NodeKind::ForIn:
            compileForIn(node);
            break;
        case NodeKind::Break:
        case NodeKind::Continue:
            compileBreakish(node->kind == NodeKind::Break);
            break;
        case NodeKind::Return: {
            if (node->kids.empty()) {
                int src = hoist.usesThis && thisReg >= 0 ? thisReg : undefReg;
                emit(Opcode::Mov, {Operand::reg(retReg), Operand::reg(src)});
            } else {
                int v = compileExpr(node->kids[0]);
                emit(Opcode::Mov, {Operand::reg(retReg), Operand::reg(v)});
            }
            // Replicate pending finally bodies; with-scopes die with the frame.
            for (size_t i = cleanupStack.size(); i-- > 0;) {
                if (cleanupStack[i].type == CleanupEntry::FinallyE)
                    compileClonedFinally(i);
            }
            emit(Opcode::Ret, {Operand::reg(retReg)});
            break;
        }
        case NodeKind::Throw: {
            int v = compileExpr(node->kids[0]);
            emit(Opcode::Throw, {Operand::reg(v)});
            break;
        }
        case NodeKind::Try:
            compileTry(node);
            break;
        case NodeKind::With:
            compileWith(node);
            break;
        default:
            unsupported("statement", *node);
        }
        releaseTo(mark);
    }

    void compileClonedFinally(size_t index) {
        // The finally body is compiled fresh at each exit path, with the
        // cleanup entries above it masked so its own exits behave.
        std::vector<CleanupEntry> saved(cleanupStack.begin() + index, cleanupStack.end());
        const Node* body = cleanupStack[index].finallyBlock;
        cleanupStack.resize(index);
        for (const NodePtr& stmt : body->kids)
            compileStatement(stmt);
        cleanupStack.insert(cleanupStack.end(), saved.begin(), saved.end());
    }

    void compileBreakish(bool isBreak) {
        LoopCtx& loop = loops.back();
        int pendingPops = 0;
        for (size_t i = cleanupStack.size(); i-- > loop.cleanupDepth;) {
            if (cleanupStack[i].type == CleanupEntry::WithE) {
                ++pendingPops;
            } else {
                while (pendingPops-- > 0)
                    emit(Opcode::PopScope, {});
                pendingPops = 0;
                compileClonedFinally(i);
            }
        }
        Jump jump{-1, 0};
        if (pendingPops > 0) {
            int j = emit(Opcode::JmpScope,
                         {Operand::integer(pendingPops), Operand::offset(-1)});
            jump = jumpOperand(j, 1);
        } else {
            int j = emit(Opcode::Jmp, {Operand::offset(-1)});
            jump = jumpOperand(j, 0);
        }
        (isBreak ? loop.breakJumps : loop.continueJumps).push_back(jump);
    }

    bool isSimpleOperand(const NodePtr& node) {
        switch (node->kind) {
        case NodeKind::Ident:
            return node->text != "arguments";
        case NodeKind::NumberLit:
        case NodeKind::StringLit:
        case NodeKind::BoolLit:
            return true;
        default:
            return false;
        }
    }

    void compileWhile(const NodePtr& node) {
        const NodePtr& cond = node->kids[0];
        loops.push_back({cleanupStack.size(), {}, {}});
        if (cond->kind == NodeKind::Binary && cond->text == "<" &&
            isSimpleOperand(cond->kids[0]) && isSimpleOperand(cond->kids[1])) {
            // Bottom-tested form with loop-if-less, the usual shape for
            // counting loops.
            int jCond = emit(Opcode::Jmp, {Operand::offset(-1)});
            int bodyStart = here();
            compileStatement(node->kids[1]);
            patch(jumpOperand(jCond, 0), here());
            int condStart = here();
            int cmark = tempMark();
            int lhs = compileExpr(cond->kids[0]);
            int rhs = compileExpr(cond->kids[1]);
            emit(Opcode::LoopIfLess,
                 {Operand::reg(lhs), Operand::reg(rhs), Operand::offset(bodyStart)});
            releaseTo(cmark);
            LoopCtx loop = std::move(loops.back());
            loops.pop_back();
            for (Jump j : loop.continueJumps)
                patch(j, condStart);
            for (Jump j : loop.breakJumps)
                patch(j, here());
            return;
        }
        int head = here();
        int cmark = tempMark();
        int condReg = compileExpr(cond);
        int jExit = emit(Opcode::JFalse, {Operand::reg(condReg), Operand::offset(-1)});
        releaseTo(cmark);
        compileStatement(node->kids[1]);
        emit(Opcode::Jmp, {Operand::offset(head)});
        patch(jumpOperand(jExit, 1), here());
        LoopCtx loop = std::move(loops.back());
        loops.pop_back();
        for (Jump j : loop.continueJumps)
            patch(j, head);
        for (Jump j : loop.breakJumps)
            patch(j, here());
    }

    void compileForIn(const NodePtr& node) {
        int baseReg = allocTemp();
        int iterReg = allocTemp();
        int iReg = allocTemp();
        int sizeReg = allocTemp();
        {
            int mark = tempMark();
            int obj = compileExpr(node->kids[0]);
            if (obj != baseReg)
                emit(Opcode::Mov, {Operand::reg(baseReg), Operand::reg(obj)});
            releaseTo(mark);
        }
        int jBreak = emit(Opcode::GetPnames,
                          {Operand::reg(iterReg), Operand::reg(baseReg), Operand::reg(iReg),
                           Operand::reg(sizeReg), Operand::offset(-1)});
        int fetch = here();
        int keyReg = allocTemp();
        int jBody = emit(Opcode::NextPname,
                         {Operand::reg(keyReg), Operand::reg(baseReg), Operand::reg(iReg),
                          Operand::reg(sizeReg), Operand::reg(iterReg), Operand::offset(-1)});
        int jExit = emit(Opcode::Jmp, {Operand::offset(-1)});
        patch(jumpOperand(jBody, 5), here());
        emitNameWrite(node->text, keyReg, *node);
        loops.push_back({cleanupStack.size(), {}, {}});
        compileStatement(node->kids[1]);
        emit(Opcode::Jmp, {Operand::offset(fetch)});
        int exit = here();
        patch(jumpOperand(jBreak, 4), exit);
        patch(jumpOperand(jExit, 0), exit);
        LoopCtx loop = std::move(loops.back());
        loops.pop_back();
        for (Jump j : loop.continueJumps)
            patch(j, fetch);
        for (Jump j : loop.breakJumps)
            patch(j, exit);
    }

    void compileWith(const NodePtr& node) {
        int mark = tempMark();
        int obj = compileExpr(node->kids[0]);
        emit(Opcode::PushScope, {Operand::reg(obj)});
        releaseTo(mark);
        cleanupStack.push_back({CleanupEntry::WithE, nullptr});
        ++withDepth;
        shared.scopes.push_back({CompScope::WithBarrier, nullptr});
        compileStatement(node->kids[1]);
        shared.scopes.pop_back();
        --withDepth;
        cleanupStack.pop_back();
        emit(Opcode::PopScope, {});
    }

    void bindCatchParam(const std::string& name, const Node& at) {
        Ref ref = resolveName(name);
        if (ref.kind == Ref::Register) {
            emit(Opcode::Catch, {Operand::reg(ref.reg)});
        } else if (ref.kind == Ref::Scoped && ref.skip == 0) {
            int t = allocTemp();
            emit(Opcode::Catch, {Operand::reg(t)});
            emit(Opcode::PutScopedVar, {Operand::integer(ref.index),
                                        Operand::integer(ref.skip), Operand::reg(t)});
        } else {
            unsupported("catch binding", at);
        }
    }

    void compileTry(const NodePtr& node) {
        const Node* finallyBlock = node->kids[2] ? node->kids[2].get() : nullptr;
        auto emitProtected = [&] {
            if (node->kids[1]) {
                compileTryCatch([&] { compileStatements(node->kids[0]->kids); },
                                node->text, node->kids[1]);
            } else {
                compileStatements(node->kids[0]->kids);
            }
        };
        if (finallyBlock)
            compileTryFinally(emitProtected, finallyBlock);
        else
            emitProtected();
    }

    void compileTryCatch(const std::function<void()>& emitBody, const std::string& name,
                         const NodePtr& catchBlock) {
        int start = here();
        int scopesAtTry = withDepth;
        emitBody();
        int jJoin = emit(Opcode::Jmp, {Operand::offset(-1)});
        int handler = here();
        bindCatchParam(name, *catchBlock);
        compileStatements(catchBlock->kids);
        patch(jumpOperand(jJoin, 0), here());
        block.exceptionTable.push_back({start, handler, handler, scopesAtTry});
    }

    void compileTryFinally(const std::function<void()>& emitBody, const Node* finallyBlock) {
        int start = here();
        int scopesAtTry = withDepth;
        int excTemp = allocTemp();
        cleanupStack.push_back({CleanupEntry::FinallyE, finallyBlock});
        emitBody();
        cleanupStack.pop_back();
        int jNormal = emit(Opcode::Jmp, {Operand::offset(-1)});
        int handler = here();
        emit(Opcode::Catch, {Operand::reg(excTemp)});
        for (const NodePtr& stmt : finallyBlock->kids)
            compileStatement(stmt);
        emit(Opcode::Throw, {Operand::reg(excTemp)});
        patch(jumpOperand(jNormal, 0), here());
        for (const NodePtr& stmt : finallyBlock->kids)
            compileStatement(stmt);
        block.exceptionTable.push_back({start, handler, handler, scopesAtTry});
    }
};

int Compiler::compileFunction(const std::string& name,
                              const std::vector<std::string>& params,
                              const std::vector<NodePtr>& body, CompScope::Type topType,
                              bool forcedStrict) {
    int blockIndex = static_cast<int>(program.blocks.size());
    program.blocks.emplace_back(); // reserve the slot; children follow

    FnCompiler fn{*this, {}, blockIndex, topType, {}, {}};
    fn.block.name = uniqueName(name);
    fn.block.domain = options.domain;
    fn.block.argCount = static_cast<int>(params.size());

    // "use strict" prologue.
    fn.block.strictMode = forcedStrict;
    if (!body.empty() && body[0]->kind == NodeKind::ExprStmt &&
        body[0]->kids[0]->kind == NodeKind::StringLit &&
        body[0]->kids[0]->text == "use strict")
        fn.block.strictMode = true;

    for (const NodePtr& stmt : body)
        scanStmt(stmt.get(), fn.hoist);

    bool evalLike = topType != CompScope::Fn;
    fn.info.hasActivation = !evalLike && fn.hoist.hasNestedFunctions;

    // Register layout: params, infrastructure registers, register-allocated
    // locals, temps; the argument region sits at the top and is fixed up at
    // the end.
    int next = static_cast<int>(params.size());
    fn.undefReg = next++;
    if (!evalLike)
        fn.retReg = next++;
    if (!evalLike && fn.hoist.usesThis)
        fn.thisReg = next++;
    if (!evalLike && fn.hoist.usesArguments)
        fn.argsReg = next++;
    if (evalLike)
        fn.completionReg = next++;
    if (evalLike && (fn.hoist.usesThis || fn.hoist.usesArguments))
        throw UnsupportedError("this/arguments are not available at the top level");

    if (fn.info.hasActivation) {
        auto addSlot = [&](const std::string& varName) {
            if (!fn.info.bindings.count(varName)) {
                int idx = static_cast<int>(fn.block.activationVars.size());
                fn.block.activationVars.push_back(varName);
                fn.info.bindings[varName] = {Binding::Slot, idx};
            }
        };
        for (const std::string& p : params)
            addSlot(p);
        for (const std::string& v : fn.hoist.varNames)
            addSlot(v);
        for (const std::string& c : fn.hoist.catchNames)
            addSlot(c);
        for (Node* decl : fn.hoist.funcDecls)
            addSlot(decl->text);
    } else if (!evalLike) {
        for (size_t i = 0; i < params.size(); ++i)
            fn.info.bindings[params[i]] = {Binding::Reg, static_cast<int>(i)};
        auto addLocal = [&](const std::string& varName) {
            if (!fn.info.bindings.count(varName))
                fn.info.bindings[varName] = {Binding::Reg, next++};
        };
        for (const std::string& v : fn.hoist.varNames)
            addLocal(v);
        for (const std::string& c : fn.hoist.catchNames)
            addLocal(c);
        for (Node* decl : fn.hoist.funcDecls)
            addLocal(decl->text);
    } else {
        // Entry/eval: vars are dynamic; only catch parameters get registers.
        for (const std::string& c : fn.hoist.catchNames)
            if (!fn.info.bindings.count(c))
                fn.info.bindings[c] = {Binding::Reg, next++};
        for (const std::string& v : fn.hoist.varNames)
            if (topType == CompScope::EvalTop)
                fn.block.declaredVars.push_back(v);
    }
    fn.tempBase = next;

    scopes.push_back({topType, &fn.info});

    fn.emit(Opcode::Enter, {});
    if (fn.thisReg >= 0)
        fn.emit(Opcode::CreateThis, {Operand::reg(fn.thisReg)});
    if (fn.info.hasActivation) {
        int t = fn.allocTemp();
        fn.emit(Opcode::CreateActivation, {Operand::reg(t)});
        fn.releaseTo(0);
        for (size_t i = 0; i < params.size(); ++i) {
            Binding b = fn.info.bindings[params[i]];
            fn.emit(Opcode::PutScopedVar,
                    {Operand::integer(b.index), Operand::integer(0),
                     Operand::reg(static_cast<int>(i))});
        }
    }
    if (fn.argsReg >= 0)
        fn.emit(Opcode::CreateArguments, {Operand::reg(fn.argsReg)});

    // Hoisted function declarations.
    for (Node* decl : fn.hoist.funcDecls) {
        if (topType == CompScope::EvalTop) {
            int childBlock =
                compileFunction(name + "." + decl->text, decl->params, decl->kids,
                                CompScope::Fn, fn.block.strictMode);
            int funcIndex = static_cast<int>(fn.block.functionSources.size());
            fn.block.functionSources.push_back(childBlock);
            fn.block.declaredFuncs.emplace_back(decl->text, funcIndex);
            continue;
        }
        int mark = fn.tempMark();
        NodePtr synthetic = std::make_shared<Node>();
        synthetic->kind = NodeKind::FunctionExpr;
        synthetic->text = decl->text;
        synthetic->params = decl->params;
        synthetic->kids = decl->kids;
        int reg = fn.compileFunctionExpr(synthetic, decl->text);
        fn.emitNameWrite(decl->text, reg, *decl);
        fn.releaseTo(mark);
    }

    // Body; at the entry/eval level the final expression statement supplies
    // the completion value.
    for (size_t i = 0; i < body.size(); ++i) {
        bool isLast = i + 1 == body.size();
        if (evalLike && isLast && body[i]->kind == NodeKind::ExprStmt) {
            int mark = fn.tempMark();
            int v = fn.compileExpr(body[i]->kids[0]);
            fn.emit(Opcode::Mov, {Operand::reg(fn.completionReg), Operand::reg(v)});
            fn.releaseTo(mark);
        } else {
            fn.compileStatement(body[i]);
        }
    }

    if (topType == CompScope::EntryTop) {
        fn.emit(Opcode::End, {Operand::reg(fn.completionReg)});
    } else if (topType == CompScope::EvalTop) {
        fn.emit(Opcode::Ret, {Operand::reg(fn.completionReg)});
    } else {
        int src = fn.hoist.usesThis && fn.thisReg >= 0 ? fn.thisReg : fn.undefReg;
        fn.emit(Opcode::Ret, {Operand::reg(src)});
    }

    scopes.pop_back();

    // Fix up the argument region now that the register count is known.
    int registerCount = fn.tempBase + fn.maxTempDepth + fn.maxArgc;
    for (const FnCompiler::ArgFixup& fix : fn.argFixups)
        fn.block.instructions[fix.instruction].operands[fix.operand] =
            Operand::reg(registerCount - fix.argc + fix.argIndex);
    fn.block.registerCount = registerCount;

    program.blocks[blockIndex] = std::move(fn.block);
    return blockIndex;
}

} // namespace

Program compile(const std::string& source, const CompileOptions& options) {
    NodePtr ast = parse(source);
    Program program;
    Compiler compiler(program, options);
    compiler.compileFunction(options.blockName, {}, ast->kids,
                             options.evalMode ? CompScope::EvalTop : CompScope::EntryTop,
                             options.strict);
    auto diags = validate(program);
    if (!diags.empty())
        throw UnsupportedError("compiler produced invalid bytecode: " +
                               diags.front().str());
    return program;
}

} // namespace ifcvm::minijs
