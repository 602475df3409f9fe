#include "ifcvm/primops.hpp"

#include <cmath>
#include <cstdint>

namespace ifcvm {

namespace {

// Numbers stay int64 while results are exact; anything else promotes to
// double, matching the usual dynamic-language numeric tower.
Value numberValue(double d) {
    if (std::isnan(d) || std::isinf(d))
        return d;
    if (d == std::trunc(d) && std::abs(d) < 9.007199254740992e15)
        return static_cast<int64_t>(d);
    return d;
}

int32_t toInt32(const Value& v) {
    double d = toNumber(v);
    if (std::isnan(d) || std::isinf(d))
        return 0;
    return static_cast<int32_t>(static_cast<uint64_t>(static_cast<int64_t>(std::trunc(d))));
}

uint32_t toUint32(const Value& v) { return static_cast<uint32_t>(toInt32(v)); }

bool bothInts(const Value& a, const Value& b) {
    return std::holds_alternative<int64_t>(a) && std::holds_alternative<int64_t>(b);
}

enum class TypeClass { Undef, Null, Bool, Number, String, Object, Iter };

TypeClass typeClass(const Value& v) {
    if (isUndefined(v)) return TypeClass::Undef;
    if (isNull(v)) return TypeClass::Null;
    if (std::holds_alternative<bool>(v)) return TypeClass::Bool;
    if (isNumber(v)) return TypeClass::Number;
    if (isString(v)) return TypeClass::String;
    if (isLocation(v)) return TypeClass::Object;
    return TypeClass::Iter;
}

bool strictEquals(const Value& a, const Value& b) {
    TypeClass ta = typeClass(a), tb = typeClass(b);
    if (ta != tb)
        return false;
    switch (ta) {
    case TypeClass::Undef:
    case TypeClass::Null:
        return true;
    case TypeClass::Bool:
        return std::get<bool>(a) == std::get<bool>(b);
    case TypeClass::Number: {
        double x = toNumber(a), y = toNumber(b);
        return !std::isnan(x) && !std::isnan(y) && x == y;
    }
    case TypeClass::String:
        return std::get<std::string>(a) == std::get<std::string>(b);
    case TypeClass::Object:
        return std::get<Location>(a) == std::get<Location>(b);
    case TypeClass::Iter:
        return std::get<PropIter>(a) == std::get<PropIter>(b);
    }
    return false;
}

bool looseEquals(const Value& a, const Value& b) {
    TypeClass ta = typeClass(a), tb = typeClass(b);
    if (ta == tb)
        return strictEquals(a, b);
    bool aNullish = ta == TypeClass::Undef || ta == TypeClass::Null;
    bool bNullish = tb == TypeClass::Undef || tb == TypeClass::Null;
    if (aNullish || bNullish)
        return aNullish && bNullish;
    if (ta == TypeClass::Object || tb == TypeClass::Object || ta == TypeClass::Iter ||
        tb == TypeClass::Iter)
        return false; // no object-to-primitive coercion in this model
    double x = toNumber(a), y = toNumber(b);
    return !std::isnan(x) && !std::isnan(y) && x == y;
}

bool lessThan(const Value& a, const Value& b) {
    if (isString(a) && isString(b))
        return std::get<std::string>(a) < std::get<std::string>(b);
    double x = toNumber(a), y = toNumber(b);
    if (std::isnan(x) || std::isnan(y))
        return false;
    return x < y;
}

bool lessOrEqual(const Value& a, const Value& b) {
    if (isString(a) && isString(b))
        return std::get<std::string>(a) <= std::get<std::string>(b);
    double x = toNumber(a), y = toNumber(b);
    if (std::isnan(x) || std::isnan(y))
        return false;
    return x <= y;
}

bool addOverflows(int64_t a, int64_t b, int64_t* out) {
    return __builtin_add_overflow(a, b, out);
}

} // namespace

Value evalUnaryPrim(PrimOp op, const Value& a, bool valueIsFunction) {
    switch (op) {
    case PrimOp::Not:
        return !truthy(a);
    case PrimOp::Negate:
        if (auto* i = std::get_if<int64_t>(&a); i && *i != INT64_MIN && *i != 0)
            return -*i;
        return numberValue(-toNumber(a));
    case PrimOp::BitNot:
        return static_cast<int64_t>(~toInt32(a));
    case PrimOp::Inc:
        if (auto* i = std::get_if<int64_t>(&a); i && *i != INT64_MAX)
            return *i + 1;
        return numberValue(toNumber(a) + 1);
    case PrimOp::Dec:
        if (auto* i = std::get_if<int64_t>(&a); i && *i != INT64_MIN)
            return *i - 1;
        return numberValue(toNumber(a) - 1);
    case PrimOp::ToNumber: {
        double d = toNumber(a);
        return std::isnan(d) ? Value(d) : numberValue(d);
    }
    case PrimOp::IsUndefined:
        return isUndefined(a);
    case PrimOp::IsBoolean:
        return std::holds_alternative<bool>(a);
    case PrimOp::IsNumber:
        return isNumber(a);
    case PrimOp::IsString:
        return isString(a);
    case PrimOp::IsObject:
        return isLocation(a) && !valueIsFunction;
    case PrimOp::IsFunction:
        return valueIsFunction;
    default:
        return Undefined{};
    }
}

Value evalPrim(PrimOp op, const Value& a, const Value& b, bool valueIsFunction) {
    if (primOpIsUnary(op))
        return evalUnaryPrim(op, a, valueIsFunction);

    switch (op) {
    case PrimOp::Add:
        if (isString(a) || isString(b))
            return valueToDisplayString(a) + valueToDisplayString(b);
        if (bothInts(a, b)) {
            int64_t out;
            if (!addOverflows(std::get<int64_t>(a), std::get<int64_t>(b), &out))
                return out;
        }
        return numberValue(toNumber(a) + toNumber(b));
    case PrimOp::Sub:
        if (bothInts(a, b)) {
            int64_t out;
            if (!__builtin_sub_overflow(std::get<int64_t>(a), std::get<int64_t>(b), &out))
                return out;
        }
        return numberValue(toNumber(a) - toNumber(b));
    case PrimOp::Mul:
        if (bothInts(a, b)) {
            int64_t out;
            if (!__builtin_mul_overflow(std::get<int64_t>(a), std::get<int64_t>(b), &out))
                return out;
        }
        return numberValue(toNumber(a) * toNumber(b));
    case PrimOp::Div: {
        double x = toNumber(a), y = toNumber(b);
        if (bothInts(a, b) && y != 0 && std::fmod(x, y) == 0)
            return static_cast<int64_t>(x / y);
        return Value(x / y);
    }
    case PrimOp::Mod: {
        if (bothInts(a, b) && std::get<int64_t>(b) != 0 &&
            !(std::get<int64_t>(a) == INT64_MIN && std::get<int64_t>(b) == -1))
            return std::get<int64_t>(a) % std::get<int64_t>(b);
        return Value(std::fmod(toNumber(a), toNumber(b)));
    }
    case PrimOp::Eq:
        return looseEquals(a, b);
    case PrimOp::Neq:
        return !looseEquals(a, b);
    case PrimOp::StrictEq:
        return strictEquals(a, b);
    case PrimOp::NStrictEq:
        return !strictEquals(a, b);
    case PrimOp::Less:
        return lessThan(a, b);
    case PrimOp::LessEq:
        return lessOrEqual(a, b);
    case PrimOp::Greater:
        return lessThan(b, a);
    case PrimOp::GreaterEq:
        return lessOrEqual(b, a);
    case PrimOp::And:
        return truthy(a) && truthy(b);
    case PrimOp::Or:
        return truthy(a) || truthy(b);
    case PrimOp::Xor:
        return truthy(a) != truthy(b);
    case PrimOp::LShift:
        return static_cast<int64_t>(toInt32(a) << (toUint32(b) & 31));
    case PrimOp::RShift:
        return static_cast<int64_t>(toInt32(a) >> (toUint32(b) & 31));
    case PrimOp::URShift:
        return static_cast<int64_t>(toUint32(a) >> (toUint32(b) & 31));
    case PrimOp::BitAnd:
        return static_cast<int64_t>(toInt32(a) & toInt32(b));
    case PrimOp::BitOr:
        return static_cast<int64_t>(toInt32(a) | toInt32(b));
    case PrimOp::BitXor:
        return static_cast<int64_t>(toInt32(a) ^ toInt32(b));
    default:
        return Undefined{};
    }
}

} // namespace ifcvm
