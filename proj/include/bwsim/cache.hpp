#pragma once

#include <cstdint>
#include <vector>

#include "bwsim/errors.hpp"

namespace bwsim {

using Addr = std::uint64_t;
using Cycle = std::uint64_t;

// Set-associative cache with true-LRU replacement, tagged with the logical
// core that brought each line in (needed for per-owner flush). Identity
// address mapping: the set index comes straight from the bits above the
// line offset.
class Cache {
public:
    Cache(std::uint64_t size_bytes, unsigned assoc, std::uint64_t line_size)
        : ways_(assoc), line_shift_(log2_exact(line_size)) {
        std::uint64_t lines = size_bytes / line_size;
        sets_ = lines / assoc;
        if (sets_ == 0 || (sets_ & (sets_ - 1)) != 0)
            throw InvalidConfig("cache set count must be a power of two");
        set_mask_ = sets_ - 1;
        lines_.resize(sets_ * ways_);
    }

    std::uint64_t sets() const { return sets_; }
    unsigned ways() const { return ways_; }

    // Lookup with LRU update on hit.
    bool access(Addr line_addr, Cycle now) {
        Line* l = find(line_addr);
        if (!l) return false;
        l->last_use = now;
        return true;
    }

    // Lookup without touching LRU state (prefetch filtering).
    bool contains(Addr line_addr) const {
        return const_cast<Cache*>(this)->find(line_addr) != nullptr;
    }

    // Install a line; evicts LRU if the set is full.
    void insert(Addr line_addr, int owner, Cycle now) {
        Line* l = find(line_addr);
        if (l) {  // already present, refresh owner stamp
            l->last_use = now;
            return;
        }
        std::uint64_t set = line_addr & set_mask_;
        Line* victim = nullptr;
        for (unsigned w = 0; w < ways_; ++w) {
            Line& c = lines_[set * ways_ + w];
            if (!c.valid) { victim = &c; break; }
            if (!victim || c.last_use < victim->last_use) victim = &c;
        }
        victim->valid = true;
        victim->tag = line_addr;
        victim->owner = owner;
        victim->last_use = now;
    }

    void flush_all() {
        for (auto& l : lines_) l.valid = false;
    }

    void flush_owner(int owner) {
        for (auto& l : lines_)
            if (l.valid && l.owner == owner) l.valid = false;
    }

    void invalidate(Addr line_addr) {
        if (Line* l = find(line_addr)) l->valid = false;
    }

    unsigned line_shift() const { return line_shift_; }

private:
    struct Line {
        Addr tag = 0;
        Cycle last_use = 0;
        int owner = -1;
        bool valid = false;
    };

    Line* find(Addr line_addr) {
        std::uint64_t set = line_addr & set_mask_;
        for (unsigned w = 0; w < ways_; ++w) {
            Line& l = lines_[set * ways_ + w];
            if (l.valid && l.tag == line_addr) return &l;
        }
        return nullptr;
    }

    static unsigned log2_exact(std::uint64_t v) {
        unsigned s = 0;
        while ((1ULL << s) < v) ++s;
        return s;
    }

    std::uint64_t sets_ = 0;
    std::uint64_t set_mask_ = 0;
    unsigned ways_;
    unsigned line_shift_;
    std::vector<Line> lines_;
};

}  // namespace bwsim
