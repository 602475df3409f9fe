#include "ifcvm/assembler.hpp"

#include <cctype>
#include <charconv>
#include <map>
#include <optional>

namespace ifcvm {

namespace {

struct Cursor {
    const std::string& text;
    size_t pos = 0;
    int line = 1;
    int col = 1;

    bool atEnd() const { return pos >= text.size(); }
    char peek() const { return atEnd() ? '\0' : text[pos]; }

    char advance() {
        char c = text[pos++];
        if (c == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
        return c;
    }

    [[noreturn]] void fail(const std::string& msg) const { throw AsmError(msg, line, col); }

    // Skips spaces, tabs and comments; newlines and ';' are significant.
    void skipBlanks() {
        while (!atEnd()) {
            char c = peek();
            if (c == ' ' || c == '\t' || c == '\r') {
                advance();
            } else if (c == '#') {
                while (!atEnd() && peek() != '\n')
                    advance();
            } else {
                break;
            }
        }
    }

    void skipSeparators() {
        for (;;) {
            skipBlanks();
            if (!atEnd() && (peek() == '\n' || peek() == ';'))
                advance();
            else
                break;
        }
    }

    bool consume(char c) {
        skipBlanks();
        if (peek() == c) {
            advance();
            return true;
        }
        return false;
    }

    void expect(char c, const char* what) {
        if (!consume(c))
            fail(std::string("expected '") + c + "' " + what);
    }

    static bool isWordChar(char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' ||
               c == '.' || c == '$';
    }

    std::string word() {
        skipBlanks();
        std::string out;
        while (!atEnd() && isWordChar(peek()))
            out += advance();
        if (out.empty())
            fail("expected a name");
        return out;
    }

    std::string quoted() {
        // Assumes the opening quote is next.
        advance();
        std::string out;
        for (;;) {
            if (atEnd())
                fail("unterminated string");
            char c = advance();
            if (c == '"')
                break;
            if (c == '\\') {
                if (atEnd())
                    fail("unterminated escape");
                char e = advance();
                switch (e) {
                case 'n': out += '\n'; break;
                case 't': out += '\t'; break;
                case '\\': out += '\\'; break;
                case '"': out += '"'; break;
                default: fail("unknown escape"); break;
                }
            } else {
                out += c;
            }
        }
        return out;
    }

    int64_t integer() {
        skipBlanks();
        std::string digits;
        if (peek() == '-')
            digits += advance();
        while (!atEnd() && std::isdigit(static_cast<unsigned char>(peek())))
            digits += advance();
        if (digits.empty() || digits == "-")
            fail("expected an integer");
        int64_t value = 0;
        auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
        if (ec != std::errc() || p != digits.data() + digits.size())
            fail("bad integer literal");
        return value;
    }
};

struct PendingOffset {
    int blockIndex;
    int instructionIndex;
    size_t operandIndex;
    std::string label;
    int line, col;
};

struct PendingTry {
    int blockIndex;
    std::string from, to, handler;
    int scopeDepth;
    int line, col;
};

struct PendingFunc {
    int blockIndex;
    std::string target;
    int line, col;
};

// One operand: rN | n:int | b:true|false | id:name | id:"..." | prop:... | @label
Operand parseOperand(Cursor& cur, std::optional<std::string>& labelOut) {
    cur.skipBlanks();
    char c = cur.peek();
    if (c == '@') {
        cur.advance();
        labelOut = cur.word();
        return Operand::offset(-1);
    }
    if (c == 'r' && cur.pos + 1 < cur.text.size() &&
        std::isdigit(static_cast<unsigned char>(cur.text[cur.pos + 1]))) {
        cur.advance();
        return Operand::reg(cur.integer());
    }
    std::string tag = cur.word();
    cur.expect(':', "after operand tag");
    if (tag == "n")
        return Operand::integer(cur.integer());
    if (tag == "b") {
        std::string w = cur.word();
        if (w == "true")
            return Operand::boolean(true);
        if (w == "false")
            return Operand::boolean(false);
        cur.fail("expected b:true or b:false");
    }
    if (tag == "id" || tag == "prop") {
        cur.skipBlanks();
        std::string payload = cur.peek() == '"' ? cur.quoted() : cur.word();
        return tag == "id" ? Operand::ident(std::move(payload))
                           : Operand::prop(std::move(payload));
    }
    cur.fail("unknown operand tag `" + tag + "`");
}

std::string escapeString(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        switch (c) {
        case '\n': out += "\\n"; break;
        case '\t': out += "\\t"; break;
        case '\\': out += "\\\\"; break;
        case '"': out += "\\\""; break;
        default: out += c; break;
        }
    }
    out += '"';
    return out;
}

bool isPlainWord(const std::string& s) {
    if (s.empty())
        return false;
    for (char c : s)
        if (!Cursor::isWordChar(c))
            return false;
    return true;
}

std::string formatOperand(const Operand& op) {
    switch (op.kind) {
    case OperandKind::Register: return "r" + std::to_string(op.num);
    case OperandKind::Int: return "n:" + std::to_string(op.num);
    case OperandKind::Bool: return op.flag ? "b:true" : "b:false";
    case OperandKind::Ident:
        return "id:" + (isPlainWord(op.text) ? op.text : escapeString(op.text));
    case OperandKind::Prop:
        return "prop:" + (isPlainWord(op.text) ? op.text : escapeString(op.text));
    case OperandKind::Offset: return "@i" + std::to_string(op.num);
    }
    return "?";
}

} // namespace

Program parseAssembly(const std::string& text) {
    Cursor cur{text};
    Program program;
    std::vector<PendingOffset> pendingOffsets;
    std::vector<PendingTry> pendingTries;
    std::vector<PendingFunc> pendingFuncs;
    std::vector<std::map<std::string, int>> blockLabels;
    std::map<std::string, int> blockByName;

    cur.skipSeparators();
    while (!cur.atEnd()) {
        std::string kw = cur.word();
        if (kw != "func")
            cur.fail("expected `func`");

        CodeBlock block;
        block.name = cur.word();
        cur.expect('(', "after function name");
        bool first = true;
        while (!cur.consume(')')) {
            if (!first)
                cur.expect(',', "between function attributes");
            first = false;
            std::string attr = cur.word();
            if (attr == "strict") {
                block.strictMode = true;
            } else if (attr == "regs") {
                cur.expect('=', "after regs");
                block.registerCount = static_cast<int>(cur.integer());
            } else if (attr == "args") {
                cur.expect('=', "after args");
                block.argCount = static_cast<int>(cur.integer());
            } else if (attr == "domain") {
                cur.expect('=', "after domain");
                cur.skipBlanks();
                block.domain = cur.peek() == '"' ? cur.quoted() : cur.word();
            } else {
                cur.fail("unknown function attribute `" + attr + "`");
            }
        }
        cur.expect('{', "to open function body");

        int blockIndex = static_cast<int>(program.blocks.size());
        std::map<std::string, int> labels;

        cur.skipSeparators();
        while (!cur.consume('}')) {
            if (cur.atEnd())
                cur.fail("unterminated function body");
            cur.skipBlanks();
            if (cur.peek() == '@') {
                cur.advance();
                std::string label = cur.word();
                cur.expect(':', "after label");
                if (labels.count(label))
                    cur.fail("duplicate label @" + label);
                labels[label] = static_cast<int>(block.instructions.size());
                cur.skipSeparators();
                continue;
            }
            if (cur.peek() == '.') {
                cur.advance();
                std::string directive = cur.word();
                if (directive == "try") {
                    PendingTry t;
                    t.blockIndex = blockIndex;
                    t.line = cur.line;
                    t.col = cur.col;
                    cur.expect('@', "for .try start label");
                    t.from = cur.word();
                    cur.expect(',', "in .try");
                    cur.expect('@', "for .try end label");
                    t.to = cur.word();
                    cur.expect(',', "in .try");
                    cur.expect('@', "for .try handler label");
                    t.handler = cur.word();
                    t.scopeDepth = 0;
                    if (cur.consume(',')) {
                        std::string s = cur.word();
                        if (s != "scopes")
                            cur.fail("expected scopes=<n> in .try");
                        cur.expect('=', "after scopes");
                        t.scopeDepth = static_cast<int>(cur.integer());
                    }
                    pendingTries.push_back(std::move(t));
                } else if (directive == "func") {
                    PendingFunc f;
                    f.blockIndex = blockIndex;
                    f.line = cur.line;
                    f.col = cur.col;
                    f.target = cur.word();
                    pendingFuncs.push_back(std::move(f));
                } else if (directive == "avar") {
                    block.activationVars.push_back(cur.word());
                } else if (directive == "var") {
                    block.declaredVars.push_back(cur.word());
                } else if (directive == "fdecl") {
                    std::string name = cur.word();
                    cur.expect(',', "in .fdecl");
                    std::string tag = cur.word();
                    if (tag != "n")
                        cur.fail(".fdecl expects `n:<funcIndex>`");
                    cur.expect(':', "in .fdecl");
                    block.declaredFuncs.emplace_back(std::move(name),
                                                     static_cast<int>(cur.integer()));
                } else {
                    cur.fail("unknown directive ." + directive);
                }
                cur.skipSeparators();
                continue;
            }

            int insLine = cur.line, insCol = cur.col;
            std::string mnemonic = cur.word();
            auto opcode = opcodeFromName(mnemonic);
            if (!opcode)
                throw AsmError("unknown opcode `" + mnemonic + "`", insLine, insCol);

            Instruction ins{*opcode, {}};
            cur.skipBlanks();
            bool firstOperand = true;
            while (!cur.atEnd() && cur.peek() != '\n' && cur.peek() != ';' &&
                   cur.peek() != '}' && cur.peek() != '#') {
                if (!firstOperand)
                    cur.expect(',', "between operands");
                firstOperand = false;
                std::optional<std::string> label;
                int opLine = cur.line, opCol = cur.col;
                Operand operand = parseOperand(cur, label);
                if (label)
                    pendingOffsets.push_back({blockIndex,
                                              static_cast<int>(block.instructions.size()),
                                              ins.operands.size(), *label, opLine, opCol});
                ins.operands.push_back(std::move(operand));
                cur.skipBlanks();
            }

            // Arity check at parse time so errors carry positions.
            std::string_view sig = opcodeSignature(*opcode);
            size_t expected = sig.size();
            if (*opcode == Opcode::Prim && !ins.operands.empty() &&
                ins.operands[0].kind == OperandKind::Ident) {
                auto p = primOpFromName(ins.operands[0].text);
                if (!p)
                    throw AsmError("unknown prim operator `" + ins.operands[0].text + "`",
                                   insLine, insCol);
                if (primOpIsUnary(*p))
                    expected = 3;
            }
            if (ins.operands.size() != expected)
                throw AsmError(mnemonic + ": expected " + std::to_string(expected) +
                                   " operands, got " + std::to_string(ins.operands.size()),
                               insLine, insCol);

            block.instructions.push_back(std::move(ins));
            cur.skipSeparators();
        }

        if (blockByName.count(block.name))
            cur.fail("duplicate function name `" + block.name + "`");
        blockByName[block.name] = blockIndex;
        blockLabels.push_back(std::move(labels));
        program.blocks.push_back(std::move(block));
        cur.skipSeparators();
    }

    if (program.blocks.empty())
        throw AsmError("no functions in input", cur.line, cur.col);

    auto resolveLabel = [&](int blockIndex, const std::string& label, int line, int col,
                            bool allowEnd = false) -> int {
        auto& labels = blockLabels[blockIndex];
        auto it = labels.find(label);
        if (it == labels.end())
            throw AsmError("dangling label @" + label, line, col);
        int target = it->second;
        int limit = static_cast<int>(program.blocks[blockIndex].instructions.size());
        if (target >= limit + (allowEnd ? 1 : 0))
            throw AsmError("label @" + label + " points past the end of the block", line, col);
        return target;
    };

    for (const PendingOffset& p : pendingOffsets)
        program.blocks[p.blockIndex].instructions[p.instructionIndex].operands[p.operandIndex]
            .num = resolveLabel(p.blockIndex, p.label, p.line, p.col);
    for (const PendingTry& t : pendingTries) {
        ExceptionRange range;
        range.start = resolveLabel(t.blockIndex, t.from, t.line, t.col);
        range.end = resolveLabel(t.blockIndex, t.to, t.line, t.col, /*allowEnd=*/true);
        range.handler = resolveLabel(t.blockIndex, t.handler, t.line, t.col);
        range.scopeDepth = t.scopeDepth;
        program.blocks[t.blockIndex].exceptionTable.push_back(range);
    }
    for (const PendingFunc& f : pendingFuncs) {
        auto it = blockByName.find(f.target);
        if (it == blockByName.end())
            throw AsmError("`.func " + f.target + "` names an unknown function", f.line, f.col);
        program.blocks[f.blockIndex].functionSources.push_back(it->second);
    }
    return program;
}

std::string serializeAssembly(const Program& program) {
    std::string out;
    for (const CodeBlock& block : program.blocks) {
        out += "func " + block.name + "(regs=" + std::to_string(block.registerCount) +
               ", args=" + std::to_string(block.argCount);
        if (block.strictMode)
            out += ", strict";
        if (!block.domain.empty())
            out += ", domain=" + block.domain;
        out += ") {\n";

        std::vector<bool> needsLabel(block.instructions.size() + 1, false);
        for (const Instruction& ins : block.instructions)
            for (const Operand& op : ins.operands)
                if (op.kind == OperandKind::Offset && op.num >= 0 &&
                    op.num <= static_cast<int64_t>(block.instructions.size()))
                    needsLabel[op.num] = true;
        for (const ExceptionRange& range : block.exceptionTable) {
            needsLabel[range.start] = true;
            needsLabel[range.end] = true;
            needsLabel[range.handler] = true;
        }

        for (int fs : block.functionSources)
            out += "  .func " + program.blocks[fs].name + "\n";
        for (const std::string& v : block.activationVars)
            out += "  .avar " + v + "\n";
        for (const std::string& v : block.declaredVars)
            out += "  .var " + v + "\n";
        for (auto& [name, fi] : block.declaredFuncs)
            out += "  .fdecl " + name + ", n:" + std::to_string(fi) + "\n";
        for (const ExceptionRange& range : block.exceptionTable) {
            out += "  .try @i" + std::to_string(range.start) + ", @i" +
                   std::to_string(range.end) + ", @i" + std::to_string(range.handler);
            if (range.scopeDepth != 0)
                out += ", scopes=" + std::to_string(range.scopeDepth);
            out += "\n";
        }

        for (size_t i = 0; i < block.instructions.size(); ++i) {
            if (needsLabel[i])
                out += "@i" + std::to_string(i) + ":\n";
            const Instruction& ins = block.instructions[i];
            out += "  ";
            out += opcodeName(ins.opcode);
            for (size_t k = 0; k < ins.operands.size(); ++k) {
                out += k == 0 ? " " : ", ";
                out += formatOperand(ins.operands[k]);
            }
            out += "\n";
        }
        if (needsLabel[block.instructions.size()])
            out += "@i" + std::to_string(block.instructions.size()) + ":\n";
        out += "}\n";
    }
    return out;
}

} // namespace ifcvm
