#pragma once

#include "ifcvm/label.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <variant>
#include <vector>

namespace ifcvm {

using Location = uint64_t; // heap location; 0 is never allocated

// Snapshot of an object's enumerable property names, produced by get-pnames
// and consumed by next-pname.
struct PropIter {
    Location base = 0;
    std::shared_ptr<const std::vector<std::string>> names;

    bool operator==(const PropIter& other) const {
        return base == other.base &&
               (names == other.names || (names && other.names && *names == *other.names));
    }
};

struct Undefined {
    bool operator==(const Undefined&) const = default;
};
struct Null {
    bool operator==(const Null&) const = default;
};

// A runtime value: a heap location or a JS primitive.
using Value = std::variant<Undefined, Null, bool, int64_t, double, std::string, Location, PropIter>;

inline bool isUndefined(const Value& v) { return std::holds_alternative<Undefined>(v); }
inline bool isNull(const Value& v) { return std::holds_alternative<Null>(v); }
inline bool isLocation(const Value& v) { return std::holds_alternative<Location>(v); }
inline bool isString(const Value& v) { return std::holds_alternative<std::string>(v); }
inline bool isNumber(const Value& v) {
    return std::holds_alternative<int64_t>(v) || std::holds_alternative<double>(v);
}

bool truthy(const Value& v);
double toNumber(const Value& v);
std::string valueToDisplayString(const Value& v);

struct LabeledValue {
    Value value = Undefined{};
    Label label;

    static LabeledValue undef(Label l = Label::bottom()) { return {Undefined{}, l}; }

    bool operator==(const LabeledValue&) const = default;
};

} // namespace ifcvm
