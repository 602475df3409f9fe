#pragma once

#include "ifcvm/bytecode.hpp"
#include "ifcvm/value.hpp"

namespace ifcvm {

// Applies one of the 34 primitive operator variants to already-read operand
// values. Coercions follow conventional dynamic-language rules (documented
// in docs/assembler.md); labels are handled by the caller.
Value evalPrim(PrimOp op, const Value& a, const Value& b, bool valueIsFunction);
Value evalUnaryPrim(PrimOp op, const Value& a, bool valueIsFunction);

} // namespace ifcvm
