#ifndef RLQ_EVAL_HPP_
#define RLQ_EVAL_HPP_

#include <string>
#include <vector>

#include "rlq/manifest.hpp"
#include "rlq/tensor.hpp"

namespace rlq {

enum class Protocol { kCC, kSC, kGeneral };

std::string protocol_name(Protocol p);
Protocol protocol_from_name(const std::string& name);

/// Valid-gallery mask for one query.
///   General: drop gallery items sharing identity AND camera with the query.
///   CC: General, plus drop same-identity items wearing the query's clothes.
///   SC: General, plus drop same-identity items wearing other clothes.
/// Cross-identity items are always retained.
std::vector<bool> protocol_filter(const Sample& query,
                                  const std::vector<Sample>& gallery,
                                  Protocol protocol);

struct RankingResult {
  Protocol protocol = Protocol::kGeneral;
  std::vector<double> cmc;  // cmc[k-1]: fraction of queries with a hit in top-k
  double top1 = 0.0;        // == cmc[0]
  double mean_ap = 0.0;
  int evaluated_queries = 0;
  int dropped_queries = 0;  // queries with no valid same-identity match
  std::vector<double> per_query_ap;            // NaN for dropped queries
  std::vector<std::vector<int>> per_query_order;  // valid gallery indices, best first
};

/// Retrieval evaluation. Embedding rows must be unit-normalized; similarity
/// is the dot product. AP is the mean of precision-at-rank over the query's
/// relevant items (no interpolation); dropped queries are excluded from the
/// averages and counted.
RankingResult cmc_map(const Tensor& query_embeddings,
                      const std::vector<Sample>& queries,
                      const Tensor& gallery_embeddings,
                      const std::vector<Sample>& gallery, Protocol protocol);

struct CompactnessResult {
  double ratio_hq = 0.0;
  double ratio_lq = 0.0;
  bool hq_collapsed = false;
  bool lq_collapsed = false;
};

/// Within-tier identity separability: mean pairwise Euclidean distance among
/// different-identity samples of the tier divided by the mean among
/// same-identity samples. A pathologically clustered LQ tier shows as
/// ratio_lq far below ratio_hq. A fully collapsed tier (0/0) is guarded to
/// ratio 1 with its collapse flag set. Throws when a tier has fewer than two
/// identities.
CompactnessResult lq_compactness(const Tensor& embeddings,
                                 const std::vector<Sample>& samples);

/// F1 of the `positive_class` (2PR/(P+R); 0 when the denominator vanishes).
double gender_f1(const std::vector<int>& predicted, const std::vector<int>& truth,
                 int positive_class);

struct PcaResult {
  std::vector<double> coords;  // n x dims, row-major
  std::size_t n = 0;
  int dims_requested = 2;
  int dims_found = 2;          // < requested on rank-deficient input
  double variance_captured = 0.0;
};

/// Mean-centered projection onto the top principal directions via iterated
/// power method with deflation.
PcaResult pca_project(const Tensor& embeddings, int dims = 2);

// CSV emitters for the report stage.
std::string cmc_csv(const RankingResult& r);
std::string pca_csv(const PcaResult& r, const std::vector<Sample>& samples);

}  // namespace rlq

#endif  // RLQ_EVAL_HPP_
