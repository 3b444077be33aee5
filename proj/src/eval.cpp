#include "rlq/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include "rlq/rng.hpp"

namespace rlq {

std::string protocol_name(Protocol p) {
  switch (p) {
    case Protocol::kCC: return "cc";
    case Protocol::kSC: return "sc";
    case Protocol::kGeneral: return "general";
  }
  throw std::logic_error("protocol_name: bad enum");
}

Protocol protocol_from_name(const std::string& name) {
  if (name == "cc") return Protocol::kCC;
  if (name == "sc") return Protocol::kSC;
  if (name == "general") return Protocol::kGeneral;
  throw std::invalid_argument("unknown protocol: " + name);
}

std::vector<bool> protocol_filter(const Sample& query,
                                  const std::vector<Sample>& gallery,
                                  Protocol protocol) {
  std::vector<bool> valid(gallery.size(), true);
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    const Sample& g = gallery[i];
    if (g.id != query.id) continue;  // cross-identity always retained
    if (g.camera == query.camera) {
      valid[i] = false;  // same-identity same-camera junk rule
      continue;
    }
    if (protocol == Protocol::kCC && g.clothes == query.clothes) valid[i] = false;
    if (protocol == Protocol::kSC && g.clothes != query.clothes) valid[i] = false;
  }
  return valid;
}

RankingResult cmc_map(const Tensor& query_embeddings,
                      const std::vector<Sample>& queries,
                      const Tensor& gallery_embeddings,
                      const std::vector<Sample>& gallery, Protocol protocol) {
  const std::size_t nq = queries.size(), ng = gallery.size();
  if (query_embeddings.rows() != nq || gallery_embeddings.rows() != ng ||
      query_embeddings.cols() != gallery_embeddings.cols()) {
    throw std::invalid_argument("cmc_map: embedding/manifest size mismatch");
  }
  const std::size_t d = query_embeddings.cols();
  const auto qv = query_embeddings.data();
  const auto gv = gallery_embeddings.data();

  RankingResult out;
  out.protocol = protocol;
  out.per_query_ap.assign(nq, std::numeric_limits<double>::quiet_NaN());
  out.per_query_order.resize(nq);

  std::size_t max_valid = 0;
  std::vector<std::vector<int>> hit_ranks;  // per evaluated query: rank of first hit
  std::vector<int> first_hit;
  double ap_total = 0.0;

  for (std::size_t q = 0; q < nq; ++q) {
    const auto valid = protocol_filter(queries[q], gallery, protocol);
    std::vector<int> order;
    for (std::size_t g = 0; g < ng; ++g) {
      if (valid[g]) order.push_back(static_cast<int>(g));
    }
    bool any_relevant = false;
    for (int g : order) {
      any_relevant = any_relevant || gallery[static_cast<std::size_t>(g)].id == queries[q].id;
    }
    if (!any_relevant) {
      ++out.dropped_queries;
      continue;
    }

    std::vector<double> sims(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) {
      const auto g = static_cast<std::size_t>(order[k]);
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += qv[q * d + j] * gv[g * d + j];
      sims[k] = s;
    }
    std::vector<std::size_t> idx(order.size());
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      if (sims[a] != sims[b]) return sims[a] > sims[b];
      return order[a] < order[b];
    });

    std::vector<int> sorted;
    sorted.reserve(order.size());
    for (auto k : idx) sorted.push_back(order[k]);
    max_valid = std::max(max_valid, sorted.size());

    int relevant_seen = 0;
    double ap = 0.0;
    int first = -1;
    for (std::size_t rank = 0; rank < sorted.size(); ++rank) {
      if (gallery[static_cast<std::size_t>(sorted[rank])].id == queries[q].id) {
        ++relevant_seen;
        ap += static_cast<double>(relevant_seen) / static_cast<double>(rank + 1);
        if (first < 0) first = static_cast<int>(rank);
      }
    }
    ap /= relevant_seen;
    ap_total += ap;
    out.per_query_ap[q] = ap;
    out.per_query_order[q] = std::move(sorted);
    first_hit.push_back(first);
    ++out.evaluated_queries;
  }

  if (out.evaluated_queries == 0) {
    throw std::runtime_error("cmc_map: every query was dropped by the protocol filter");
  }
  out.mean_ap = ap_total / out.evaluated_queries;
  out.cmc.assign(max_valid, 0.0);
  for (int f : first_hit) {
    for (std::size_t k = static_cast<std::size_t>(f); k < max_valid; ++k) out.cmc[k] += 1.0;
  }
  for (auto& v : out.cmc) v /= out.evaluated_queries;
  out.top1 = out.cmc.empty() ? 0.0 : out.cmc[0];
  return out;
}

CompactnessResult lq_compactness(const Tensor& embeddings,
                                 const std::vector<Sample>& samples) {
  if (embeddings.rows() != samples.size()) {
    throw std::invalid_argument("lq_compactness: embedding/manifest size mismatch");
  }
  const std::size_t d = embeddings.cols();
  const auto ev = embeddings.data();

  CompactnessResult out;
  for (Tier tier : {Tier::kHQ, Tier::kLQ}) {
    std::vector<std::size_t> members;
    std::set<int> ids;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].tier == tier) {
        members.push_back(i);
        ids.insert(samples[i].id);
      }
    }
    if (ids.size() < 2) {
      throw std::invalid_argument("lq_compactness: tier with fewer than two identities");
    }
    double same_sum = 0.0, diff_sum = 0.0;
    std::size_t same_n = 0, diff_n = 0;
    for (std::size_t a = 0; a < members.size(); ++a) {
      for (std::size_t b = a + 1; b < members.size(); ++b) {
        const std::size_t ia = members[a], ib = members[b];
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double diff = ev[ia * d + j] - ev[ib * d + j];
          s += diff * diff;
        }
        const double dist = std::sqrt(s);
        if (samples[ia].id == samples[ib].id) {
          same_sum += dist;
          ++same_n;
        } else {
          diff_sum += dist;
          ++diff_n;
        }
      }
    }
    if (same_n == 0) {
      throw std::invalid_argument("lq_compactness: tier lacks same-identity pairs");
    }
    const double numer = diff_sum / static_cast<double>(diff_n);
    const double denom = same_sum / static_cast<double>(same_n);
    double ratio;
    bool collapsed = false;
    if (denom == 0.0 && numer == 0.0) {
      ratio = 1.0;  // fully collapsed tier
      collapsed = true;
    } else if (denom == 0.0) {
      ratio = std::numeric_limits<double>::infinity();
    } else {
      ratio = numer / denom;
    }
    if (tier == Tier::kHQ) {
      out.ratio_hq = ratio;
      out.hq_collapsed = collapsed;
    } else {
      out.ratio_lq = ratio;
      out.lq_collapsed = collapsed;
    }
  }
  return out;
}

double gender_f1(const std::vector<int>& predicted, const std::vector<int>& truth,
                 int positive_class) {
  if (predicted.size() != truth.size()) {
    throw std::invalid_argument("gender_f1: size mismatch");
  }
  long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool pred_pos = predicted[i] == positive_class;
    const bool true_pos = truth[i] == positive_class;
    tp += pred_pos && true_pos;
    fp += pred_pos && !true_pos;
    fn += !pred_pos && true_pos;
  }
  const long denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

PcaResult pca_project(const Tensor& embeddings, int dims) {
  const std::size_t n = embeddings.rows(), d = embeddings.cols();
  if (n < static_cast<std::size_t>(dims) + 1) {
    throw std::invalid_argument("pca_project: need at least dims+1 samples");
  }
  const auto ev = embeddings.data();

  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += ev[i * d + j];
  for (auto& m : mean) m /= static_cast<double>(n);

  std::vector<double> centered(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) centered[i * d + j] = ev[i * d + j] - mean[j];

  std::vector<double> cov(d * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < d; ++a) {
      const double va = centered[i * d + a];
      if (va == 0.0) continue;
      for (std::size_t b = 0; b < d; ++b) cov[a * d + b] += va * centered[i * d + b];
    }
  }
  for (auto& c : cov) c /= static_cast<double>(n);
  double total_var = 0.0;
  for (std::size_t a = 0; a < d; ++a) total_var += cov[a * d + a];

  PcaResult out;
  out.n = n;
  out.dims_requested = dims;
  out.coords.assign(n * static_cast<std::size_t>(dims), 0.0);

  Rng rng(987654321);
  std::vector<std::vector<double>> components;
  std::vector<double> eigenvalues;
  for (int comp = 0; comp < dims; ++comp) {
    std::vector<double> v(d);
    for (auto& x : v) x = rng.normal();
    double lambda = 0.0;
    for (int iter = 0; iter < 1000; ++iter) {
      std::vector<double> w(d, 0.0);
      for (std::size_t a = 0; a < d; ++a) {
        const double va = v[a];
        if (va == 0.0) continue;
        for (std::size_t b = 0; b < d; ++b) w[b] += cov[a * d + b] * va;
      }
      double norm = 0.0;
      for (double x : w) norm += x * x;
      norm = std::sqrt(norm);
      if (norm < 1e-14) {
        lambda = 0.0;
        break;
      }
      for (auto& x : w) x /= norm;
      double delta = 0.0;
      for (std::size_t j = 0; j < d; ++j) delta = std::max(delta, std::fabs(w[j] - v[j]));
      v = std::move(w);
      const double new_lambda = norm;
      const bool settled = std::fabs(new_lambda - lambda) < 1e-13 * std::max(1.0, new_lambda) &&
                           delta < 1e-10;
      lambda = new_lambda;
      if (settled) break;
    }
    if (lambda <= 1e-12 * std::max(1.0, total_var)) break;  // rank deficient

    // fixed sign convention: largest-magnitude entry positive
    std::size_t arg = 0;
    for (std::size_t j = 1; j < d; ++j) {
      if (std::fabs(v[j]) > std::fabs(v[arg])) arg = j;
    }
    if (v[arg] < 0) {
      for (auto& x : v) x = -x;
    }

    for (std::size_t i = 0; i < n; ++i) {
      double proj = 0.0;
      for (std::size_t j = 0; j < d; ++j) proj += centered[i * d + j] * v[j];
      out.coords[i * static_cast<std::size_t>(dims) + static_cast<std::size_t>(comp)] = proj;
    }
    // deflate
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) cov[a * d + b] -= lambda * v[a] * v[b];
    components.push_back(v);
    eigenvalues.push_back(lambda);
  }
  out.dims_found = static_cast<int>(components.size());
  double captured = 0.0;
  for (double l : eigenvalues) captured += l;
  out.variance_captured = total_var > 0.0 ? captured / total_var : 0.0;
  return out;
}

std::string cmc_csv(const RankingResult& r) {
  std::ostringstream os;
  os.precision(17);
  os << "rank,cmc\n";
  for (std::size_t k = 0; k < r.cmc.size(); ++k) {
    os << (k + 1) << "," << r.cmc[k] << "\n";
  }
  return os.str();
}

std::string pca_csv(const PcaResult& r, const std::vector<Sample>& samples) {
  if (samples.size() != r.n) throw std::invalid_argument("pca_csv: size mismatch");
  std::ostringstream os;
  os.precision(17);
  os << "x,y,id,tier\n";
  const auto dims = static_cast<std::size_t>(r.dims_requested);
  for (std::size_t i = 0; i < r.n; ++i) {
    os << r.coords[i * dims] << "," << (dims > 1 ? r.coords[i * dims + 1] : 0.0) << ","
       << samples[i].id << "," << tier_name(samples[i].tier) << "\n";
  }
  return os.str();
}

}  // namespace rlq
