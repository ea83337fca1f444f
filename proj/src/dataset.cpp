#include "aerialvg/dataset.hpp"

#include <exception>
#include <fstream>
#include <json.hpp>

#include "aerialvg/rng.hpp"

namespace aerialvg {

using ordered_json = nlohmann::ordered_json;

std::string to_json_line(const GroundingInstance& inst) {
  ordered_json j;
  j["seed"] = inst.seed;
  j["size"] = {inst.height, inst.width};
  ordered_json ents = ordered_json::array();
  for (const Entity& e : inst.entities) {
    ordered_json je;
    je["bbox"] = {e.bbox.cx, e.bbox.cy, e.bbox.w, e.bbox.h};
    je["color"] = color_name(e.color);
    je["vtype"] = vehicle_name(e.vtype);
    ents.push_back(std::move(je));
  }
  j["entities"] = std::move(ents);
  j["target"] = inst.target;
  j["aux"] = inst.aux;
  j["relation"] = relation_name(inst.relation);
  j["caption"] = inst.caption;
  j["caption_text"] = inst.caption_text;
  return j.dump();
}

GroundingInstance from_json_line(const std::string& line) {
  try {
    const auto j = ordered_json::parse(line);
    GroundingInstance inst;
    inst.seed = j.at("seed").get<std::uint64_t>();
    inst.height = j.at("size").at(0).get<std::size_t>();
    inst.width = j.at("size").at(1).get<std::size_t>();
    for (const auto& je : j.at("entities")) {
      Entity e;
      const auto& b = je.at("bbox");
      e.bbox = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()};
      const auto c = parse_color(je.at("color").get<std::string>());
      const auto v = parse_vehicle(je.at("vtype").get<std::string>());
      if (!c || !v) throw DatasetError("unknown color or vehicle type");
      e.color = *c;
      e.vtype = *v;
      inst.entities.push_back(e);
    }
    inst.target = j.at("target").get<std::size_t>();
    inst.aux = j.at("aux").get<std::size_t>();
    const auto r = parse_relation(j.at("relation").get<std::string>());
    if (!r) throw DatasetError("unknown relation " + j.at("relation").get<std::string>());
    inst.relation = *r;
    inst.caption = j.at("caption").get<std::vector<int>>();
    inst.caption_text = j.at("caption_text").get<std::string>();
    for (int t : inst.caption) {
      if (t < 0 || static_cast<std::size_t>(t) >= kVocabSize) {
        throw DatasetError("caption token " + std::to_string(t) + " is outside the vocabulary");
      }
    }
    if (inst.caption.empty() || inst.caption.size() > kMaxTokens) throw DatasetError("caption length out of range");
    return inst;
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(std::string("malformed dataset record: ") + e.what());
  }
}

void write_dataset(const std::string& path, const std::vector<GroundingInstance>& instances) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot open " + path + " for writing");
  for (const auto& inst : instances) out << to_json_line(inst) << '\n';
  if (!out) throw DatasetError("write failed for " + path);
}

std::vector<GroundingInstance> read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open dataset " + path);
  std::vector<GroundingInstance> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(from_json_line(line));
    } catch (const DatasetError& e) {
      throw DatasetError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<GroundingInstance> generate_dataset(const GenConfig& cfg, std::uint64_t base_seed, std::size_t count) {
  std::vector<GroundingInstance> out(count);
  std::exception_ptr failure;
  const auto n = static_cast<std::ptrdiff_t>(count);
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      out[static_cast<std::size_t>(i)] = generate_instance(cfg, derive_seed(base_seed, static_cast<std::uint64_t>(i)));
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace aerialvg
