#pragma once

#include <map>

#include "mpcs/dataset.hpp"
#include "mpcs/image.hpp"
#include "mpcs/rng.hpp"

namespace mpcs {

enum class PairKind { FixedPair, OrderedPair, RandomPair };

std::string to_string(PairKind k);
PairKind pair_kind_from_string(const std::string& s);

// Pair-sampling strategy: how much of the magnification choice is fixed by a
// human rule. Fixed pins both views, Ordered pins the second via a lookup
// table, Random pins neither. mf1 != mf2 always (anti-collapse).
struct PairStrategy {
    PairKind kind = PairKind::OrderedPair;
    Magnification fixed_first = Magnification::x200;
    Magnification fixed_second = Magnification::x400;
    std::map<Magnification, Magnification> lookup;

    static PairStrategy fixed(Magnification first, Magnification second);
    static PairStrategy ordered(std::map<Magnification, Magnification> table = {});
    static PairStrategy random();

    void validate() const;  // throws ConfigError on a malformed strategy
};

// Two magnification-tagged views of one specimen; the contrastive unit.
struct ViewPair {
    std::string specimen_id;
    Magnification mf1 = Magnification::x40;
    Magnification mf2 = Magnification::x100;
    ImageF view1;
    ImageF view2;
};

// Default ordered-pair table: next-higher adjacent factor, wrapping down at
// 400 (40->100, 100->200, 200->400, 400->200).
std::map<Magnification, Magnification> default_ordered_lookup();

int degrees_of_freedom(const PairStrategy& strategy);  // Fixed 0, Ordered 1, Random 2

ViewPair sample_pair(const PairStrategy& strategy, const MagnifiedSample& sample, Rng& rng);

}  // namespace mpcs
