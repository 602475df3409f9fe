#pragma once

#include "ifcvm/bytecode.hpp"

#include <memory>
#include <stdexcept>
#include <string>

namespace ifcvm::minijs {

struct ParseError : std::runtime_error {
    int line;
    int column;
    ParseError(std::string msg, int line_, int column_)
        : std::runtime_error(std::move(msg)), line(line_), column(column_) {}
};

struct UnsupportedError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

enum class NodeKind {
    Program,
    // statements
    VarDecl,      // text=name, kids[0]=init (optional)
    ExprStmt,     // kids[0]
    If,           // kids[0]=cond, kids[1]=then, kids[2]=else (optional)
    While,        // kids[0]=cond, kids[1]=body
    Break,
    Continue,
    Return,       // kids[0]=value (optional)
    FunctionDecl, // text=name, params, kids=body statements
    Block,        // kids
    Try,          // kids[0]=try block, kids[1]=catch block (optional),
                  // kids[2]=finally block (optional), text=catch name
    Throw,        // kids[0]
    With,         // kids[0]=object, kids[1]=body
    ForIn,        // text=name, flag=isDecl, kids[0]=object, kids[1]=body
    // expressions
    NumberLit,    // num
    StringLit,    // text
    BoolLit,      // flag
    UndefinedLit,
    Ident,        // text
    This,
    Assign,       // kids[0]=target (Ident or Member), kids[1]=value
    Binary,       // text=op, kids[0], kids[1]
    Logical,      // text op ("&&"/"||"), kids[0], kids[1]
    Unary,        // text=op ("!","-","~","typeof"), kids[0]
    Call,         // kids[0]=callee, rest=args
    New,          // kids[0]=callee, rest=args
    Member,       // text=property, kids[0]=object
    ObjectLit,    // props
    FunctionExpr, // text=name (may be empty), params, kids=body
    Delete,       // kids[0]=Member
};

struct ObjectProp {
    std::string name;
    bool isGetter = false;
    NodePtr value; // getter: a FunctionExpr with no params
};

struct Node {
    NodeKind kind;
    std::string text;
    int64_t num = 0;
    bool flag = false;
    std::vector<NodePtr> kids;
    std::vector<std::string> params;
    std::vector<ObjectProp> props;
    int line = 0;
    int column = 0;
};

// Parses a program; round-trip property: parse(prettyPrint(ast)) equals ast.
NodePtr parse(const std::string& source);
std::string prettyPrint(const NodePtr& program);
bool astEquals(const NodePtr& a, const NodePtr& b);

struct CompileOptions {
    bool strict = false;          // forced strict (eval from a strict caller)
    std::string domain;           // origin domain annotation for all blocks
    std::string blockName = "main";
    bool evalMode = false;        // compile as an eval block: dynamic name
                                  // resolution, `ret` instead of `end`
};

// Deterministic source-to-bytecode compiler; output passes validate() and
// both buildCfg variants.
Program compile(const std::string& source, const CompileOptions& options = {});

} // namespace ifcvm::minijs
