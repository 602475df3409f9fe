#include "ifcvm/heap.hpp"

#include <cassert>
#include <stdexcept>

namespace ifcvm {

const PropertyDescriptor* ObjectRecord::find(const std::string& name) const {
    for (auto& [n, d] : properties_)
        if (n == name)
            return &d;
    return nullptr;
}

PropertyDescriptor* ObjectRecord::find(const std::string& name) {
    for (auto& [n, d] : properties_)
        if (n == name)
            return &d;
    return nullptr;
}

void ObjectRecord::set(const std::string& name, PropertyDescriptor descriptor) {
    if (PropertyDescriptor* existing = find(name)) {
        *existing = std::move(descriptor);
        return;
    }
    properties_.emplace_back(name, std::move(descriptor));
}

bool ObjectRecord::erase(const std::string& name) {
    for (auto it = properties_.begin(); it != properties_.end(); ++it) {
        if (it->first == name) {
            properties_.erase(it);
            return true;
        }
    }
    return false;
}

std::vector<std::string> ObjectRecord::enumerablePropertyNames() const {
    std::vector<std::string> names;
    for (auto& [n, d] : properties_)
        if (d.enumerable)
            names.push_back(n);
    return names;
}

Location Heap::allocate(ObjectRecord object) {
    objects_.push_back(std::move(object));
    return objects_.size();
}

ObjectRecord& Heap::at(Location loc) {
    if (!live(loc))
        throw std::out_of_range("dead heap location " + std::to_string(loc));
    return objects_[loc - 1];
}

const ObjectRecord& Heap::at(Location loc) const {
    if (!live(loc))
        throw std::out_of_range("dead heap location " + std::to_string(loc));
    return objects_[loc - 1];
}

LookupResult protoChainLookup(const Heap& heap, Location start, const std::string& name,
                              Label startLabel) {
    LookupResult result;
    Label acc = startLabel;
    std::optional<Location> current = start;
    while (current) {
        const ObjectRecord& object = heap.at(*current);
        acc = acc.join(object.structLabel);
        if (const PropertyDescriptor* descriptor = object.find(name)) {
            result.found = true;
            result.holder = *current;
            result.chainLabel = acc;
            if (descriptor->isAccessor()) {
                result.accessorHit = true;
                result.getter = descriptor->accessor->getter;
                result.setter = descriptor->accessor->setter;
                result.value = {Undefined{}, acc.join(descriptor->value.label)};
            } else {
                result.value = {descriptor->value.value, acc.join(descriptor->value.label)};
            }
            return result;
        }
        acc = acc.join(object.protoLabel);
        current = object.protoRef;
    }
    result.chainLabel = acc;
    result.value = {Undefined{}, acc};
    return result;
}

ScopeChain pushScopeNode(ScopeChain chain, ScopeNode node) {
    node.next = std::move(chain);
    return std::make_shared<const ScopeNode>(std::move(node));
}

int scopeChainLength(const ScopeChain& chain) {
    int length = 0;
    for (const ScopeNode* n = chain.get(); n; n = n->next.get())
        ++length;
    return length;
}

} // namespace ifcvm
