#include "ifcvm/value.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>

namespace ifcvm {

bool truthy(const Value& v) {
    if (isUndefined(v) || isNull(v))
        return false;
    if (auto* b = std::get_if<bool>(&v))
        return *b;
    if (auto* i = std::get_if<int64_t>(&v))
        return *i != 0;
    if (auto* d = std::get_if<double>(&v))
        return *d != 0.0 && !std::isnan(*d);
    if (auto* s = std::get_if<std::string>(&v))
        return !s->empty();
    return true; // locations and property iterators
}

double toNumber(const Value& v) {
    if (isUndefined(v))
        return std::nan("");
    if (isNull(v))
        return 0.0;
    if (auto* b = std::get_if<bool>(&v))
        return *b ? 1.0 : 0.0;
    if (auto* i = std::get_if<int64_t>(&v))
        return static_cast<double>(*i);
    if (auto* d = std::get_if<double>(&v))
        return *d;
    if (auto* s = std::get_if<std::string>(&v)) {
        size_t begin = s->find_first_not_of(" \t\n\r");
        if (begin == std::string::npos)
            return 0.0;
        size_t end = s->find_last_not_of(" \t\n\r") + 1;
        std::string trimmed = s->substr(begin, end - begin);
        double out = 0;
        auto [p, ec] = std::from_chars(trimmed.data(), trimmed.data() + trimmed.size(), out);
        if (ec == std::errc() && p == trimmed.data() + trimmed.size())
            return out;
        return std::nan("");
    }
    return std::nan(""); // locations and property iterators
}

static std::string numberToString(double d) {
    if (std::isnan(d))
        return "NaN";
    if (std::isinf(d))
        return d > 0 ? "Infinity" : "-Infinity";
    if (d == static_cast<int64_t>(d) && std::abs(d) < 9.007199254740992e15)
        return std::to_string(static_cast<int64_t>(d));
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), d);
    return std::string(buf, p);
}

std::string valueToDisplayString(const Value& v) {
    if (isUndefined(v))
        return "undefined";
    if (isNull(v))
        return "null";
    if (auto* b = std::get_if<bool>(&v))
        return *b ? "true" : "false";
    if (auto* i = std::get_if<int64_t>(&v))
        return std::to_string(*i);
    if (auto* d = std::get_if<double>(&v))
        return numberToString(*d);
    if (auto* s = std::get_if<std::string>(&v))
        return *s;
    if (auto* loc = std::get_if<Location>(&v))
        return "@" + std::to_string(*loc);
    return "[property-iterator]";
}

} // namespace ifcvm
