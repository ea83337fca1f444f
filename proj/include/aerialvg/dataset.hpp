#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aerialvg/scene.hpp"

namespace aerialvg {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One JSON object per line, keys in this order:
// seed, size [H, W], entities [{bbox [cx,cy,w,h], color, vtype}], target, aux,
// relation, caption [token ids], caption_text.
std::string to_json_line(const GroundingInstance& inst);
GroundingInstance from_json_line(const std::string& line);

void write_dataset(const std::string& path, const std::vector<GroundingInstance>& instances);
std::vector<GroundingInstance> read_dataset(const std::string& path);

// Instance i of a dataset uses derive_seed(base_seed, i). Generation runs in
// parallel; output order is always by index.
std::vector<GroundingInstance> generate_dataset(const GenConfig& cfg, std::uint64_t base_seed, std::size_t count);

}  // namespace aerialvg
