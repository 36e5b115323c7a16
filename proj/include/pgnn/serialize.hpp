#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "pgnn/couplings.hpp"

namespace pgnn::serialize {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kBundleVersion = 1;

// Stamped into every output document; no timestamps, so identical runs
// produce identical bytes.
struct Provenance {
    std::string tool = "pgnn";
    std::string version = kToolVersion;
    std::uint64_t seed = 0;
    std::string config_hash;
};

std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t value);

// Versioned single-document model bundle: kind, every parameter set, the
// normalization stats, and a fingerprint of the training data (the evaluate
// command's leakage guard). Round-trips are value-exact.
std::string bundle_to_json(const couple::CoupledModel& model, const Provenance& provenance,
                           std::uint64_t train_fingerprint);

struct LoadedBundle {
    couple::CoupledModel model;
    Provenance provenance;
    std::uint64_t train_fingerprint = 0;
};

LoadedBundle bundle_from_json(const std::string& text);

}  // namespace pgnn::serialize
