#pragma once

#include "ifcvm/label.hpp"
#include "ifcvm/value.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace ifcvm {

struct ScopeNode;
using ScopeChain = std::shared_ptr<const ScopeNode>;

struct AccessorPair {
    std::optional<Location> getter;
    std::optional<Location> setter;
};

// Attribute flags exist but the model never modifies them, so they stay true.
struct PropertyDescriptor {
    LabeledValue value;
    bool writable = true;
    bool enumerable = true;
    bool configurable = true;
    std::optional<AccessorPair> accessor;

    bool isAccessor() const { return accessor.has_value(); }
};

struct FunctionPart {
    int codeBlock = -1;          // index into the program's blocks
    ScopeChain scope;            // closing context Σ
    bool isHostEval = false;     // the genuine global eval
};

// Ordinary object N = ({p_i -> v_i}, __proto__ -> a^lp, ls); function
// objects additionally carry F = (N, cfg, Σ). Property order is insertion
// order so pnames iteration and the Def-4 name-list comparison are
// deterministic. Activation records (variable environments) reuse the same
// storage with `activation` set: their ordered properties are the slots,
// they are invisible to the adversary, and they may hold star-bearing
// values, unlike ordinary objects.
class ObjectRecord {
public:
    std::optional<Location> protoRef;
    Label protoLabel;     // lp
    Label structLabel;    // ls
    std::optional<FunctionPart> functionPart;
    bool activation = false;

    bool isFunction() const { return functionPart.has_value(); }

    const PropertyDescriptor* find(const std::string& name) const;
    PropertyDescriptor* find(const std::string& name);
    void set(const std::string& name, PropertyDescriptor descriptor);
    bool erase(const std::string& name);

    const std::vector<std::pair<std::string, PropertyDescriptor>>& properties() const {
        return properties_;
    }
    std::vector<std::string> enumerablePropertyNames() const;

private:
    std::vector<std::pair<std::string, PropertyDescriptor>> properties_;
};

// Locations are never reused within a run; allocation order is deterministic
// so the NI bijection can pair corresponding allocations.
class Heap {
public:
    Location allocate(ObjectRecord object);

    ObjectRecord& at(Location loc);
    const ObjectRecord& at(Location loc) const;
    bool live(Location loc) const { return loc >= 1 && loc <= objects_.size(); }
    Location lastLocation() const { return objects_.size(); }

private:
    std::vector<ObjectRecord> objects_; // location k lives at index k-1
};

// Result of a prototype-chain lookup: either a data value (label already
// folded with the chain's lp/ls labels and the caller's start label) or an
// accessor hit that the interpreter turns into a getter call.
struct LookupResult {
    LabeledValue value;           // data hit, or undefined with the chain label
    bool found = false;
    bool accessorHit = false;
    std::optional<Location> getter;
    std::optional<Location> setter;
    Label chainLabel;             // accumulated label at the hit (or end)
    Location holder = 0;          // object owning the property when found
};

// Walks __proto__ links from `start`, joining the structure label of every
// visited object and the label of every traversed link onto `startLabel`.
LookupResult protoChainLookup(const Heap& heap, Location start, const std::string& name,
                              Label startLabel);

// Scope chain node: an object (with-scope, global) or activation, plus the
// label of the link recording the context in which it was pushed. Chains are
// persistent so function objects can snapshot their closing context.
struct ScopeNode {
    Location object = 0;
    Label linkLabel;
    ScopeChain next;
};

ScopeChain pushScopeNode(ScopeChain chain, ScopeNode node);
int scopeChainLength(const ScopeChain& chain);

} // namespace ifcvm
