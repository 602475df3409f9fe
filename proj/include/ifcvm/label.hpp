#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ifcvm {

// Security label: a bit-set of taint domains plus an orthogonal star marker
// for partially leaked values. Bottom is ({}, no star); star sits above
// everything with the same bits.
class Label {
public:
    constexpr Label() = default;
    constexpr Label(uint64_t bits, bool star) : bits_(bits), star_(star) {}

    static constexpr Label bottom() { return Label(); }
    static constexpr Label ofBit(unsigned bit) { return Label(uint64_t{1} << bit, false); }

    constexpr uint64_t bits() const { return bits_; }
    constexpr bool star() const { return star_; }
    constexpr bool isBottom() const { return bits_ == 0 && !star_; }

    constexpr Label join(Label other) const;
    constexpr Label withStar() const { return Label(bits_, true); }

    // a <= b iff a.bits subset of b.bits and (a.star implies b.star).
    constexpr bool leq(Label other) const {
        return (bits_ & ~other.bits_) == 0 && (!star_ || other.star_);
    }

    // Visibility to a (non-star) observer. A star-bearing label is never
    // observable since star never flows below a star-free label.
    constexpr bool visibleTo(Label observer) const { return leq(observer); }

    constexpr bool operator==(const Label&) const = default;

private:
    uint64_t bits_ = 0;
    bool star_ = false;
};

namespace detail {
// Join count, used by `run --stats` to compare monitor configurations.
extern thread_local uint64_t joinCounter;
}

constexpr Label Label::join(Label other) const {
    if (!std::is_constant_evaluated())
        ++detail::joinCounter;
    return Label(bits_ | other.bits_, star_ || other.star_);
}

inline uint64_t joinCount() { return detail::joinCounter; }
inline void resetJoinCount() { detail::joinCounter = 0; }

// Maps domain names to bit positions, first-seen order. At most 64 domains;
// exceeding the capacity is a configuration error, not silent saturation.
class DomainRegistry {
public:
    static constexpr unsigned capacity = 64;

    unsigned registerDomain(std::string_view name);
    std::optional<unsigned> find(std::string_view name) const;
    Label labelOf(std::string_view name) { return Label::ofBit(registerDomain(name)); }

    const std::vector<std::string>& names() const { return names_; }
    size_t size() const { return names_.size(); }

    // Textual label syntax: `low` = bottom, `{d1,d2}` = bit-set, suffix `*`
    // = star (e.g. `{secret}*`). Parsing registers unseen domains.
    Label parse(std::string_view text);
    std::string format(Label l) const;

private:
    std::vector<std::string> names_;
};

struct LabelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace ifcvm
