#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace cdcd {

struct CheckpointArray {
    std::string name;
    int rows = 0;
    int cols = 0;
    std::vector<double> data;
};

// Header JSON (format version, config snapshot, vocabulary, RNG state,
// parameter manifest with names/shapes/offsets) followed by the raw
// little-endian float64 payload in manifest order.
struct CheckpointData {
    int format_version = 1;
    std::string config_json;
    std::vector<std::string> vocab;
    int64_t step = 0;
    std::vector<std::pair<std::string, std::array<uint64_t, 3>>> rng;  // seed, stream, counter
    int64_t adam_model_steps = 0;
    int64_t adam_warp_steps = 0;
    std::vector<CheckpointArray> arrays;

    const CheckpointArray& array(const std::string& name) const;
};

void write_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::string& path);

inline constexpr int kCheckpointFormatVersion = 1;

}  // namespace cdcd
