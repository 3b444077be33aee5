#ifndef RLQ_MANIFEST_HPP_
#define RLQ_MANIFEST_HPP_

#include <map>
#include <set>
#include <string>
#include <vector>

namespace rlq {

enum class Split { kTrain, kQuery, kGallery };
enum class Tier { kHQ, kLQ };

std::string split_name(Split s);
Split split_from_name(const std::string& name);
std::string tier_name(Tier t);
Tier tier_from_name(const std::string& name);

/// One image record of the dataset manifest.
struct Sample {
  std::string path;      // relative to the dataset root
  int id = 0;
  int clothes = 0;       // globally unique clothes label
  int camera = 0;
  int gender = 0;        // 0 female, 1 male
  Tier tier = Tier::kHQ;
  std::string artifact = R"({"kind":"none"})";  // descriptor JSON
  Split split = Split::kTrain;
};

/// JSONL-backed sample collection with the integrity helpers the trainer and
/// evaluator share.
struct Manifest {
  std::vector<Sample> samples;

  void save_jsonl(const std::string& path) const;
  static Manifest load_jsonl(const std::string& path);

  std::vector<Sample> filter(Split split) const;
  std::vector<Sample> filter(Split split, Tier tier) const;

  /// identity -> set of clothes labels seen in the manifest
  std::map<int, std::set<int>> id_to_clothes() const;

  std::set<int> identities() const;
  std::set<int> clothes_labels() const;

  /// Checks referential integrity: every path exists under `root`, every
  /// (id, clothes) pair is consistent, query/gallery identities overlap.
  /// Throws std::runtime_error on violations.
  void validate(const std::string& root) const;
};

}  // namespace rlq

#endif  // RLQ_MANIFEST_HPP_
