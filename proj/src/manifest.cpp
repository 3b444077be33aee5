#include "rlq/manifest.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace rlq {

std::string split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kQuery: return "query";
    case Split::kGallery: return "gallery";
  }
  throw std::logic_error("split_name: bad enum");
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "query") return Split::kQuery;
  if (name == "gallery") return Split::kGallery;
  throw std::invalid_argument("unknown split: " + name);
}

std::string tier_name(Tier t) { return t == Tier::kHQ ? "hq" : "lq"; }

Tier tier_from_name(const std::string& name) {
  if (name == "hq") return Tier::kHQ;
  if (name == "lq") return Tier::kLQ;
  throw std::invalid_argument("unknown tier: " + name);
}

void Manifest::save_jsonl(const std::string& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("manifest: cannot write " + path);
  for (const auto& s : samples) {
    nlohmann::json j;
    j["path"] = s.path;
    j["id"] = s.id;
    j["clothes"] = s.clothes;
    j["camera"] = s.camera;
    j["gender"] = s.gender;
    j["tier"] = tier_name(s.tier);
    j["artifact"] = nlohmann::json::parse(s.artifact);
    j["split"] = split_name(s.split);
    f << j.dump() << "\n";
  }
}

Manifest Manifest::load_jsonl(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("manifest: cannot read " + path);
  Manifest m;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    Sample s;
    s.path = j.at("path").get<std::string>();
    s.id = j.at("id").get<int>();
    s.clothes = j.at("clothes").get<int>();
    s.camera = j.at("camera").get<int>();
    s.gender = j.at("gender").get<int>();
    s.tier = tier_from_name(j.at("tier").get<std::string>());
    s.artifact = j.at("artifact").dump();
    s.split = split_from_name(j.at("split").get<std::string>());
    m.samples.push_back(std::move(s));
  }
  return m;
}

std::vector<Sample> Manifest::filter(Split split) const {
  std::vector<Sample> out;
  for (const auto& s : samples) {
    if (s.split == split) out.push_back(s);
  }
  return out;
}

std::vector<Sample> Manifest::filter(Split split, Tier tier) const {
  std::vector<Sample> out;
  for (const auto& s : samples) {
    if (s.split == split && s.tier == tier) out.push_back(s);
  }
  return out;
}

std::map<int, std::set<int>> Manifest::id_to_clothes() const {
  std::map<int, std::set<int>> out;
  for (const auto& s : samples) out[s.id].insert(s.clothes);
  return out;
}

std::set<int> Manifest::identities() const {
  std::set<int> out;
  for (const auto& s : samples) out.insert(s.id);
  return out;
}

std::set<int> Manifest::clothes_labels() const {
  std::set<int> out;
  for (const auto& s : samples) out.insert(s.clothes);
  return out;
}

void Manifest::validate(const std::string& root) const {
  std::map<int, int> clothes_owner;  // clothes label -> identity
  std::set<int> query_ids, gallery_ids;
  for (const auto& s : samples) {
    const auto full = std::filesystem::path(root) / s.path;
    if (!std::filesystem::exists(full)) {
      throw std::runtime_error("manifest: missing file " + full.string());
    }
    const auto [it, inserted] = clothes_owner.emplace(s.clothes, s.id);
    if (!inserted && it->second != s.id) {
      throw std::runtime_error("manifest: clothes label " + std::to_string(s.clothes) +
                               " owned by two identities");
    }
    if (s.split == Split::kQuery) query_ids.insert(s.id);
    if (s.split == Split::kGallery) gallery_ids.insert(s.id);
  }
  for (int id : query_ids) {
    if (!gallery_ids.count(id)) {
      throw std::runtime_error("manifest: query identity " + std::to_string(id) +
                               " absent from the gallery");
    }
  }
}

}  // namespace rlq
