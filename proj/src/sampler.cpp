#include "mpcs/sampler.hpp"

namespace mpcs {

std::string to_string(PairKind k) {
    switch (k) {
        case PairKind::FixedPair: return "fixed";
        case PairKind::OrderedPair: return "ordered";
        case PairKind::RandomPair: return "random";
    }
    return "?";
}

PairKind pair_kind_from_string(const std::string& s) {
    if (s == "fixed") return PairKind::FixedPair;
    if (s == "ordered") return PairKind::OrderedPair;
    if (s == "random") return PairKind::RandomPair;
    throw ConfigError("unknown sampler kind: " + s + " (expected fixed|ordered|random)");
}

std::map<Magnification, Magnification> default_ordered_lookup() {
    return {{Magnification::x40, Magnification::x100},
            {Magnification::x100, Magnification::x200},
            {Magnification::x200, Magnification::x400},
            {Magnification::x400, Magnification::x200}};
}

PairStrategy PairStrategy::fixed(Magnification first, Magnification second) {
    PairStrategy s;
    s.kind = PairKind::FixedPair;
    s.fixed_first = first;
    s.fixed_second = second;
    s.validate();
    return s;
}

PairStrategy PairStrategy::ordered(std::map<Magnification, Magnification> table) {
    PairStrategy s;
    s.kind = PairKind::OrderedPair;
    s.lookup = table.empty() ? default_ordered_lookup() : std::move(table);
    s.validate();
    return s;
}

PairStrategy PairStrategy::random() {
    PairStrategy s;
    s.kind = PairKind::RandomPair;
    return s;
}

void PairStrategy::validate() const {
    if (kind == PairKind::FixedPair && fixed_first == fixed_second)
        throw ConfigError("FixedPair views must differ");
    if (kind == PairKind::OrderedPair) {
        for (Magnification m : kMagnifications) {
            auto it = lookup.find(m);
            if (it == lookup.end())
                throw ConfigError("OrderedPair lookup missing entry for " + to_string(m));
            if (it->second == m)
                throw ConfigError("OrderedPair lookup maps " + to_string(m) + " to itself");
        }
    }
}

int degrees_of_freedom(const PairStrategy& strategy) {
    switch (strategy.kind) {
        case PairKind::FixedPair: return 0;
        case PairKind::OrderedPair: return 1;
        case PairKind::RandomPair: return 2;
    }
    return 0;
}

ViewPair sample_pair(const PairStrategy& strategy, const MagnifiedSample& sample, Rng& rng) {
    if (!sample.complete())
        throw DataError("IncompleteSample: specimen " + sample.specimen_id + " has " +
                        std::to_string(sample.images.size()) + " magnifications, need 4");
    strategy.validate();

    Magnification mf1 = strategy.fixed_first;
    Magnification mf2 = strategy.fixed_second;
    switch (strategy.kind) {
        case PairKind::FixedPair:
            break;
        case PairKind::OrderedPair:
            mf1 = kMagnifications[static_cast<size_t>(rng.uniform_index(4))];
            mf2 = strategy.lookup.at(mf1);
            break;
        case PairKind::RandomPair: {
            // uniform over the 12 ordered pairs with distinct members
            const int idx = rng.uniform_index(12);
            const int first = idx / 3;
            int second = idx % 3;
            if (second >= first) ++second;
            mf1 = kMagnifications[static_cast<size_t>(first)];
            mf2 = kMagnifications[static_cast<size_t>(second)];
            break;
        }
    }

    ViewPair pair;
    pair.specimen_id = sample.specimen_id;
    pair.mf1 = mf1;
    pair.mf2 = mf2;
    pair.view1 = to_float(sample.images.at(mf1));
    pair.view2 = to_float(sample.images.at(mf2));
    return pair;
}

}  // namespace mpcs
