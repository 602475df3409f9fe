#include "ifcvm/minijs.hpp"

#include <cctype>
#include <charconv>

namespace ifcvm::minijs {

namespace {

enum class Tok {
    End, Ident, Number, String, Punct, Keyword,
};

const char* const kKeywords[] = {
    "var", "function", "if", "else", "while", "break", "continue", "return",
    "try", "catch", "finally", "throw", "with", "for", "in", "new", "delete",
    "typeof", "instanceof", "true", "false", "null", "undefined", "this", "get",
};

bool isKeyword(const std::string& w) {
    for (const char* k : kKeywords)
        if (w == k)
            return true;
    return false;
}

struct Lexer {
    const std::string& src;
    size_t pos = 0;
    int line = 1, col = 1;

    Tok kind = Tok::End;
    std::string text;
    int64_t number = 0;
    int tokLine = 1, tokCol = 1;

    explicit Lexer(const std::string& s) : src(s) { next(); }

    [[noreturn]] void fail(const std::string& msg) const {
        throw ParseError(msg, tokLine, tokCol);
    }

    char peekc(size_t ahead = 0) const {
        return pos + ahead < src.size() ? src[pos + ahead] : '\0';
    }

    char getc() {
        char c = src[pos++];
        if (c == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
        return c;
    }

    void skipSpace() {
        for (;;) {
            while (pos < src.size() &&
                   std::isspace(static_cast<unsigned char>(peekc())))
                getc();
            if (peekc() == '/' && peekc(1) == '/') {
                while (pos < src.size() && peekc() != '\n')
                    getc();
            } else if (peekc() == '/' && peekc(1) == '*') {
                getc();
                getc();
                while (pos < src.size() && !(peekc() == '*' && peekc(1) == '/'))
                    getc();
                if (pos >= src.size())
                    throw ParseError("unterminated block comment", line, col);
                getc();
                getc();
            } else {
                break;
            }
        }
    }

    void next() {
        skipSpace();
        tokLine = line;
        tokCol = col;
        text.clear();
        if (pos >= src.size()) {
            kind = Tok::End;
            return;
        }
        char c = peekc();
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '$') {
            while (pos < src.size() &&
                   (std::isalnum(static_cast<unsigned char>(peekc())) ||
                    peekc() == '_' || peekc() == '$'))
                text += getc();
            kind = isKeyword(text) ? Tok::Keyword : Tok::Ident;
            return;
        }
        if (std::isdigit(static_cast<unsigned char>(c))) {
            std::string digits;
            while (pos < src.size() && std::isdigit(static_cast<unsigned char>(peekc())))
                digits += getc();
            auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(),
                                           number);
            if (ec != std::errc())
                throw ParseError("integer literal out of range", tokLine, tokCol);
            kind = Tok::Number;
            return;
        }
        if (c == '"' || c == '\'') {
            char quote = getc();
            for (;;) {
                if (pos >= src.size())
                    throw ParseError("unterminated string", tokLine, tokCol);
                char ch = getc();
                if (ch == quote)
                    break;
                if (ch == '\\') {
                    char e = getc();
                    switch (e) {
                    case 'n': text += '\n'; break;
                    case 't': text += '\t'; break;
                    case '\\': text += '\\'; break;
                    case '\'': text += '\''; break;
                    case '"': text += '"'; break;
                    default:
                        throw ParseError("unknown escape", line, col);
                    }
                } else {
                    text += ch;
                }
            }
            kind = Tok::String;
            return;
        }
        // Multi-character punctuators, longest first.
        static const char* const puncts[] = {
            ">>>", "===", "!==", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||",
            "(", ")", "{", "}", "[", "]", ";", ",", ".", "=", "<", ">", "+",
            "-", "*", "/", "%", "!", "~", "&", "|", "^", ":",
        };
        for (const char* p : puncts) {
            size_t len = std::char_traits<char>::length(p);
            if (src.compare(pos, len, p) == 0) {
                for (size_t i = 0; i < len; ++i)
                    getc();
                text = p;
                kind = Tok::Punct;
                return;
            }
        }
        throw ParseError(std::string("unexpected character '") + c + "'", tokLine, tokCol);
    }

    bool isPunct(const char* p) const { return kind == Tok::Punct && text == p; }
    bool isKw(const char* k) const { return kind == Tok::Keyword && text == k; }

    bool eatPunct(const char* p) {
        if (isPunct(p)) {
            next();
            return true;
        }
        return false;
    }

    bool eatKw(const char* k) {
        if (isKw(k)) {
            next();
            return true;
        }
        return false;
    }

    void expectPunct(const char* p, const char* ctx) {
        if (!eatPunct(p))
            fail(std::string("expected '") + p + "' " + ctx);
    }
};

struct Parser {
    Lexer lex;
    int functionDepth = 0;
    int loopDepth = 0;

    explicit Parser(const std::string& src) : lex(src) {}

    NodePtr make(NodeKind kind) {
        auto n = std::make_shared<Node>();
        n->kind = kind;
        n->line = lex.tokLine;
        n->column = lex.tokCol;
        return n;
    }

    std::string identName() {
        if (lex.kind != Tok::Ident && !lex.isKw("get"))
            lex.fail("expected an identifier");
        std::string name = lex.text;
        lex.next();
        return name;
    }

    NodePtr parseProgram() {
        auto program = make(NodeKind::Program);
        while (lex.kind != Tok::End)
            program->kids.push_back(parseStatement());
        return program;
    }

    NodePtr parseBlockInto(NodeKind kind) {
        auto block = make(kind);
        lex.expectPunct("{", "to open a block");
        while (!lex.eatPunct("}")) {
            if (lex.kind == Tok::End)
                lex.fail("unterminated block");
            block->kids.push_back(parseStatement());
        }
        return block;
    }

    NodePtr parseStatement() {
        if (lex.isPunct("{"))
            return parseBlockInto(NodeKind::Block);
        if (lex.eatPunct(";")) {
            auto empty = make(NodeKind::Block);
            return empty;
        }
        if (lex.isKw("var")) {
            lex.next();
            auto decl = make(NodeKind::VarDecl);
            decl->text = identName();
            if (lex.eatPunct("="))
                decl->kids.push_back(parseAssignExpr());
            lex.expectPunct(";", "after var declaration");
            return decl;
        }
        if (lex.isKw("function")) {
            lex.next();
            auto fn = make(NodeKind::FunctionDecl);
            fn->text = identName();
            parseFunctionRest(*fn);
            return fn;
        }
        if (lex.isKw("if")) {
            lex.next();
            auto stmt = make(NodeKind::If);
            lex.expectPunct("(", "after if");
            stmt->kids.push_back(parseExpr());
            lex.expectPunct(")", "after if condition");
            stmt->kids.push_back(parseStatement());
            if (lex.eatKw("else"))
                stmt->kids.push_back(parseStatement());
            return stmt;
        }
        if (lex.isKw("while")) {
            lex.next();
            auto stmt = make(NodeKind::While);
            lex.expectPunct("(", "after while");
            stmt->kids.push_back(parseExpr());
            lex.expectPunct(")", "after while condition");
            ++loopDepth;
            stmt->kids.push_back(parseStatement());
            --loopDepth;
            return stmt;
        }
        if (lex.isKw("for")) {
            lex.next();
            auto stmt = make(NodeKind::ForIn);
            lex.expectPunct("(", "after for");
            if (lex.eatKw("var"))
                stmt->flag = true;
            stmt->text = identName();
            if (!lex.eatKw("in"))
                lex.fail("only for-in loops are supported");
            stmt->kids.push_back(parseExpr());
            lex.expectPunct(")", "after for-in header");
            ++loopDepth;
            stmt->kids.push_back(parseStatement());
            --loopDepth;
            return stmt;
        }
        if (lex.isKw("break")) {
            lex.next();
            if (loopDepth == 0)
                lex.fail("break outside a loop");
            lex.expectPunct(";", "after break");
            return make(NodeKind::Break);
        }
        if (lex.isKw("continue")) {
            lex.next();
            if (loopDepth == 0)
                lex.fail("continue outside a loop");
            lex.expectPunct(";", "after continue");
            return make(NodeKind::Continue);
        }
        if (lex.isKw("return")) {
            lex.next();
            if (functionDepth == 0)
                lex.fail("return outside a function");
            auto stmt = make(NodeKind::Return);
            if (!lex.isPunct(";"))
                stmt->kids.push_back(parseExpr());
            lex.expectPunct(";", "after return");
            return stmt;
        }
        if (lex.isKw("try")) {
            lex.next();
            auto stmt = make(NodeKind::Try);
            stmt->kids.push_back(parseBlockInto(NodeKind::Block));
            stmt->kids.push_back(nullptr);
            stmt->kids.push_back(nullptr);
            if (lex.eatKw("catch")) {
                lex.expectPunct("(", "after catch");
                stmt->text = identName();
                lex.expectPunct(")", "after catch parameter");
                stmt->kids[1] = parseBlockInto(NodeKind::Block);
            }
            if (lex.eatKw("finally"))
                stmt->kids[2] = parseBlockInto(NodeKind::Block);
            if (!stmt->kids[1] && !stmt->kids[2])
                lex.fail("try requires catch or finally");
            return stmt;
        }
        if (lex.isKw("throw")) {
            lex.next();
            auto stmt = make(NodeKind::Throw);
            stmt->kids.push_back(parseExpr());
            lex.expectPunct(";", "after throw");
            return stmt;
        }
        if (lex.isKw("with")) {
            lex.next();
            auto stmt = make(NodeKind::With);
            lex.expectPunct("(", "after with");
            stmt->kids.push_back(parseExpr());
            lex.expectPunct(")", "after with object");
            stmt->kids.push_back(parseStatement());
            return stmt;
        }
        auto stmt = make(NodeKind::ExprStmt);
        stmt->kids.push_back(parseExpr());
        lex.expectPunct(";", "after expression statement");
        return stmt;
    }

    void parseFunctionRest(Node& fn) {
        lex.expectPunct("(", "after function name");
        if (!lex.isPunct(")")) {
            fn.params.push_back(identName());
            while (lex.eatPunct(","))
                fn.params.push_back(identName());
        }
        lex.expectPunct(")", "after parameters");
        lex.expectPunct("{", "to open the function body");
        ++functionDepth;
        int savedLoops = loopDepth;
        loopDepth = 0;
        while (!lex.eatPunct("}")) {
            if (lex.kind == Tok::End)
                lex.fail("unterminated function body");
            fn.kids.push_back(parseStatement());
        }
        loopDepth = savedLoops;
        --functionDepth;
    }

    NodePtr parseExpr() { return parseAssignExpr(); }

    NodePtr parseAssignExpr() {
        NodePtr lhs = parseLogicalOr();
        if (lex.isPunct("=")) {
            if (lhs->kind != NodeKind::Ident && lhs->kind != NodeKind::Member)
                lex.fail("invalid assignment target");
            lex.next();
            auto assign = make(NodeKind::Assign);
            assign->kids.push_back(lhs);
            assign->kids.push_back(parseAssignExpr());
            return assign;
        }
        return lhs;
    }

    NodePtr parseBinaryChain(NodePtr (Parser::*sub)(), std::initializer_list<const char*> ops,
                             bool logical = false) {
        NodePtr lhs = (this->*sub)();
        for (;;) {
            const char* matched = nullptr;
            for (const char* op : ops)
                if (lex.isPunct(op) || lex.isKw(op)) {
                    matched = op;
                    break;
                }
            if (!matched)
                return lhs;
            lex.next();
            auto node = make(logical ? NodeKind::Logical : NodeKind::Binary);
            node->text = matched;
            node->kids.push_back(lhs);
            node->kids.push_back((this->*sub)());
            lhs = node;
        }
    }

    NodePtr parseLogicalOr() {
        return parseBinaryChain(&Parser::parseLogicalAnd, {"||"}, true);
    }
    NodePtr parseLogicalAnd() {
        return parseBinaryChain(&Parser::parseBitOr, {"&&"}, true);
    }
    NodePtr parseBitOr() { return parseBinaryChain(&Parser::parseBitXor, {"|"}); }
    NodePtr parseBitXor() { return parseBinaryChain(&Parser::parseBitAnd, {"^"}); }
    NodePtr parseBitAnd() { return parseBinaryChain(&Parser::parseEquality, {"&"}); }
    NodePtr parseEquality() {
        return parseBinaryChain(&Parser::parseRelational, {"===", "!==", "==", "!="});
    }
    NodePtr parseRelational() {
        return parseBinaryChain(&Parser::parseShift, {"<=", ">=", "<", ">", "instanceof"});
    }
    NodePtr parseShift() {
        return parseBinaryChain(&Parser::parseAdditive, {">>>", "<<", ">>"});
    }
    NodePtr parseAdditive() {
        return parseBinaryChain(&Parser::parseMultiplicative, {"+", "-"});
    }
    NodePtr parseMultiplicative() {
        return parseBinaryChain(&Parser::parseUnary, {"*", "/", "%"});
    }

    NodePtr parseUnary() {
        for (const char* op : {"!", "-", "~"}) {
            if (lex.isPunct(op)) {
                lex.next();
                auto node = make(NodeKind::Unary);
                node->text = op;
                node->kids.push_back(parseUnary());
                return node;
            }
        }
        if (lex.isKw("typeof")) {
            lex.next();
            auto node = make(NodeKind::Unary);
            node->text = "typeof";
            node->kids.push_back(parseUnary());
            return node;
        }
        if (lex.isKw("delete")) {
            lex.next();
            auto node = make(NodeKind::Delete);
            NodePtr target = parseUnary();
            if (target->kind != NodeKind::Member)
                lex.fail("delete needs a property access");
            node->kids.push_back(target);
            return node;
        }
        return parsePostfix();
    }

    NodePtr parsePostfix() {
        NodePtr expr = parsePrimary();
        for (;;) {
            if (lex.eatPunct(".")) {
                auto member = make(NodeKind::Member);
                member->text = identName();
                member->kids.push_back(expr);
                expr = member;
                continue;
            }
            if (lex.isPunct("(")) {
                auto call = make(NodeKind::Call);
                call->kids.push_back(expr);
                parseArgs(*call);
                expr = call;
                continue;
            }
            if (lex.isPunct("["))
                lex.fail("computed property access is not supported");
            return expr;
        }
    }

    void parseArgs(Node& call) {
        lex.expectPunct("(", "to open the argument list");
        if (!lex.isPunct(")")) {
            call.kids.push_back(parseAssignExpr());
            while (lex.eatPunct(","))
                call.kids.push_back(parseAssignExpr());
        }
        lex.expectPunct(")", "to close the argument list");
    }

    NodePtr parsePrimary() {
        if (lex.kind == Tok::Number) {
            auto node = make(NodeKind::NumberLit);
            node->num = lex.number;
            lex.next();
            return node;
        }
        if (lex.kind == Tok::String) {
            auto node = make(NodeKind::StringLit);
            node->text = lex.text;
            lex.next();
            return node;
        }
        if (lex.isKw("true") || lex.isKw("false")) {
            auto node = make(NodeKind::BoolLit);
            node->flag = lex.text == "true";
            lex.next();
            return node;
        }
        if (lex.isKw("undefined")) {
            lex.next();
            return make(NodeKind::UndefinedLit);
        }
        if (lex.isKw("null"))
            lex.fail("null is not supported; use undefined");
        if (lex.isKw("this")) {
            lex.next();
            return make(NodeKind::This);
        }
        if (lex.isKw("new")) {
            lex.next();
            auto node = make(NodeKind::New);
            NodePtr callee = parsePrimary();
            while (lex.eatPunct(".")) {
                auto member = make(NodeKind::Member);
                member->text = identName();
                member->kids.push_back(callee);
                callee = member;
            }
            node->kids.push_back(callee);
            if (lex.isPunct("("))
                parseArgs(*node);
            return node;
        }
        if (lex.isKw("function")) {
            lex.next();
            auto fn = make(NodeKind::FunctionExpr);
            if (lex.kind == Tok::Ident)
                fn->text = identName();
            parseFunctionRest(*fn);
            return fn;
        }
        if (lex.isKw("get"))
            lex.fail("unexpected 'get' outside an object literal");
        if (lex.kind == Tok::Ident) {
            auto node = make(NodeKind::Ident);
            node->text = lex.text;
            lex.next();
            return node;
        }
        if (lex.eatPunct("(")) {
            NodePtr inner = parseExpr();
            lex.expectPunct(")", "to close a parenthesized expression");
            return inner;
        }
        if (lex.isPunct("{")) {
            lex.next();
            auto obj = make(NodeKind::ObjectLit);
            if (!lex.isPunct("}")) {
                parseObjectProp(*obj);
                while (lex.eatPunct(","))
                    parseObjectProp(*obj);
            }
            lex.expectPunct("}", "to close an object literal");
            return obj;
        }
        lex.fail("expected an expression");
    }

    void parseObjectProp(Node& obj) {
        ObjectProp prop;
        if (lex.isKw("get")) {
            lex.next();
            // `get` may still be a plain property name (`get: expr`).
            if (!lex.isPunct(":")) {
                prop.isGetter = true;
                prop.name = identName();
                auto fn = make(NodeKind::FunctionExpr);
                parseFunctionRest(*fn);
                if (!fn->params.empty())
                    lex.fail("getters take no parameters");
                prop.value = fn;
                obj.props.push_back(std::move(prop));
                return;
            }
            prop.name = "get";
        } else if (lex.kind == Tok::String) {
            prop.name = lex.text;
            lex.next();
        } else {
            prop.name = identName();
        }
        lex.expectPunct(":", "after property name");
        prop.value = parseAssignExpr();
        obj.props.push_back(std::move(prop));
    }
};

void printNode(const NodePtr& node, std::string& out, int indent);

void printIndent(std::string& out, int indent) {
    out.append(static_cast<size_t>(indent) * 2, ' ');
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

void printBody(const std::vector<NodePtr>& kids, std::string& out, int indent) {
    out += "{\n";
    for (const NodePtr& kid : kids) {
        printIndent(out, indent + 1);
        printNode(kid, out, indent + 1);
        out += "\n";
    }
    printIndent(out, indent);
    out += "}";
}

void printExpr(const NodePtr& node, std::string& out) {
    switch (node->kind) {
    case NodeKind::NumberLit:
        out += std::to_string(node->num);
        return;
    case NodeKind::StringLit:
        out += escapeString(node->text);
        return;
    case NodeKind::BoolLit:
        out += node->flag ? "true" : "false";
        return;
    case NodeKind::UndefinedLit:
        out += "undefined";
        return;
    case NodeKind::Ident:
        out += node->text;
        return;
    case NodeKind::This:
        out += "this";
        return;
    case NodeKind::Assign:
        out += "(";
        printExpr(node->kids[0], out);
        out += " = ";
        printExpr(node->kids[1], out);
        out += ")";
        return;
    case NodeKind::Binary:
    case NodeKind::Logical:
        out += "(";
        printExpr(node->kids[0], out);
        out += " " + node->text + " ";
        printExpr(node->kids[1], out);
        out += ")";
        return;
    case NodeKind::Unary:
        out += "(" + node->text + (node->text == "typeof" ? " " : "");
        printExpr(node->kids[0], out);
        out += ")";
        return;
    case NodeKind::Delete:
        out += "(delete ";
        printExpr(node->kids[0], out);
        out += ")";
        return;
    case NodeKind::Member:
        printExpr(node->kids[0], out);
        out += "." + node->text;
        return;
    case NodeKind::Call:
    case NodeKind::New: {
        if (node->kind == NodeKind::New)
            out += "new ";
        printExpr(node->kids[0], out);
        out += "(";
        for (size_t i = 1; i < node->kids.size(); ++i) {
            if (i > 1)
                out += ", ";
            printExpr(node->kids[i], out);
        }
        out += ")";
        return;
    }
    case NodeKind::ObjectLit: {
        out += "{ ";
        bool first = true;
        for (const ObjectProp& prop : node->props) {
            if (!first)
                out += ", ";
            first = false;
            if (prop.isGetter) {
                out += "get " + prop.name + "() ";
                printBody(prop.value->kids, out, 0);
            } else {
                out += prop.name + ": ";
                printExpr(prop.value, out);
            }
        }
        out += first ? "}" : " }";
        return;
    }
    case NodeKind::FunctionExpr:
        out += "function";
        if (!node->text.empty())
            out += " " + node->text;
        out += "(";
        for (size_t i = 0; i < node->params.size(); ++i) {
            if (i)
                out += ", ";
            out += node->params[i];
        }
        out += ") ";
        printBody(node->kids, out, 0);
        return;
    default:
        out += "/*?*/";
        return;
    }
}

void printNode(const NodePtr& node, std::string& out, int indent) {
    switch (node->kind) {
    case NodeKind::Program:
        for (size_t i = 0; i < node->kids.size(); ++i) {
            printNode(node->kids[i], out, indent);
            out += "\n";
        }
        return;
    case NodeKind::VarDecl:
        out += "var " + node->text;
        if (!node->kids.empty()) {
            out += " = ";
            printExpr(node->kids[0], out);
        }
        out += ";";
        return;
    case NodeKind::ExprStmt:
        printExpr(node->kids[0], out);
        out += ";";
        return;
    case NodeKind::If:
        out += "if (";
        printExpr(node->kids[0], out);
        out += ") ";
        printNode(node->kids[1], out, indent);
        if (node->kids.size() > 2) {
            out += " else ";
            printNode(node->kids[2], out, indent);
        }
        return;
    case NodeKind::While:
        out += "while (";
        printExpr(node->kids[0], out);
        out += ") ";
        printNode(node->kids[1], out, indent);
        return;
    case NodeKind::Break:
        out += "break;";
        return;
    case NodeKind::Continue:
        out += "continue;";
        return;
    case NodeKind::Return:
        out += "return";
        if (!node->kids.empty()) {
            out += " ";
            printExpr(node->kids[0], out);
        }
        out += ";";
        return;
    case NodeKind::FunctionDecl:
        out += "function " + node->text + "(";
        for (size_t i = 0; i < node->params.size(); ++i) {
            if (i)
                out += ", ";
            out += node->params[i];
        }
        out += ") ";
        printBody(node->kids, out, indent);
        return;
    case NodeKind::Block:
        printBody(node->kids, out, indent);
        return;
    case NodeKind::Try:
        out += "try ";
        printBody(node->kids[0]->kids, out, indent);
        if (node->kids[1]) {
            out += " catch (" + node->text + ") ";
            printBody(node->kids[1]->kids, out, indent);
        }
        if (node->kids[2]) {
            out += " finally ";
            printBody(node->kids[2]->kids, out, indent);
        }
        return;
    case NodeKind::Throw:
        out += "throw ";
        printExpr(node->kids[0], out);
        out += ";";
        return;
    case NodeKind::With:
        out += "with (";
        printExpr(node->kids[0], out);
        out += ") ";
        printNode(node->kids[1], out, indent);
        return;
    case NodeKind::ForIn:
        out += "for (";
        if (node->flag)
            out += "var ";
        out += node->text + " in ";
        printExpr(node->kids[0], out);
        out += ") ";
        printNode(node->kids[1], out, indent);
        return;
    default:
        printExpr(node, out);
        out += ";";
        return;
    }
}

} // namespace

NodePtr parse(const std::string& source) {
    Parser parser(source);
    return parser.parseProgram();
}

std::string prettyPrint(const NodePtr& program) {
    std::string out;
    printNode(program, out, 0);
    return out;
}

bool astEquals(const NodePtr& a, const NodePtr& b) {
    if (!a || !b)
        return !a && !b;
    if (a->kind != b->kind || a->text != b->text || a->num != b->num ||
        a->flag != b->flag || a->params != b->params ||
        a->kids.size() != b->kids.size() || a->props.size() != b->props.size())
        return false;
    for (size_t i = 0; i < a->kids.size(); ++i)
        if (!astEquals(a->kids[i], b->kids[i]))
            return false;
    for (size_t i = 0; i < a->props.size(); ++i) {
        if (a->props[i].name != b->props[i].name ||
            a->props[i].isGetter != b->props[i].isGetter ||
            !astEquals(a->props[i].value, b->props[i].value))
            return false;
    }
    return true;
}

} // namespace ifcvm::minijs
