#pragma once

#include "ifcvm/bytecode.hpp"

#include <stdexcept>
#include <string>

namespace ifcvm {

struct AsmError : std::runtime_error {
    int line;
    int column;
    AsmError(std::string msg, int line_, int column_)
        : std::runtime_error(std::move(msg)), line(line_), column(column_) {}
};

// Line-oriented assembly, extension `.ifcasm`, UTF-8, `#` comments, `;` acts
// as a line separator. Jump operands are written `@label` and resolved to
// instruction indices at parse time.
Program parseAssembly(const std::string& text);
std::string serializeAssembly(const Program& program);

} // namespace ifcvm
