#include "ifcvm/label.hpp"

#include <algorithm>

namespace ifcvm {

namespace detail {
thread_local uint64_t joinCounter = 0;
}

unsigned DomainRegistry::registerDomain(std::string_view name) {
    if (name.empty())
        throw LabelError("empty domain name");
    for (size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name)
            return static_cast<unsigned>(i);
    if (names_.size() >= capacity)
        throw LabelError("domain registry full (max 64 domains)");
    names_.emplace_back(name);
    return static_cast<unsigned>(names_.size() - 1);
}

std::optional<unsigned> DomainRegistry::find(std::string_view name) const {
    for (size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name)
            return static_cast<unsigned>(i);
    return std::nullopt;
}

Label DomainRegistry::parse(std::string_view text) {
    bool star = false;
    if (!text.empty() && text.back() == '*') {
        star = true;
        text.remove_suffix(1);
    }
    if (text == "low" || text == "{}")
        return Label(0, star);
    if (text.size() < 2 || text.front() != '{' || text.back() != '}')
        throw LabelError("bad label syntax: expected `low` or `{d1,d2}` with optional `*`");
    text = text.substr(1, text.size() - 2);
    uint64_t bits = 0;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t comma = text.find(',', pos);
        if (comma == std::string_view::npos)
            comma = text.size();
        std::string_view name = text.substr(pos, comma - pos);
        while (!name.empty() && name.front() == ' ') name.remove_prefix(1);
        while (!name.empty() && name.back() == ' ') name.remove_suffix(1);
        if (name.empty())
            throw LabelError("empty domain in label");
        bits |= uint64_t{1} << registerDomain(name);
        pos = comma + 1;
    }
    return Label(bits, star);
}

std::string DomainRegistry::format(Label l) const {
    std::string out;
    if (l.bits() == 0) {
        out = "low";
    } else {
        out = "{";
        bool first = true;
        for (unsigned i = 0; i < capacity; ++i) {
            if (!(l.bits() & (uint64_t{1} << i)))
                continue;
            if (!first)
                out += ',';
            first = false;
            if (i < names_.size())
                out += names_[i];
            else
                out += "bit" + std::to_string(i);
        }
        out += "}";
    }
    if (l.star())
        out += '*';
    return out;
}

} // namespace ifcvm
