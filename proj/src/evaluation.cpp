#include "dsmm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <sstream>

#include "json.hpp"

#include "dsmm/metrics.hpp"
#include "dsmm/random.hpp"

namespace dsmm {

const char* to_string(Reconstructor r) { return r == Reconstructor::kIsta ? "ista" : "learned"; }

MeasurementMatrix generate_grm(Index n_b, Index n_B, std::uint64_t seed) {
  const auto B = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(n_B))));
  if (B * B != n_B) throw ValidationError("generate_grm: n_B=" + std::to_string(n_B) + " is not a square");
  if (n_b < 1) throw ValidationError("generate_grm: n_b must be >= 1");
  if (n_b > n_B) std::clog << "warning: GRM with more rows (" << n_b << ") than columns (" << n_B << ")\n";
  MeasurementMatrix m;
  m.block_size = B;
  m.sparsity_degree = 1.0;
  m.provenance = Provenance::kGaussian;
  m.entries.resize(n_b, n_B);
  Rng rng = make_rng(seed, "grm");
  fill_normal(m.entries, rng, 1.0);
  m.entries.rowwise().normalize();
  return m;
}

Blockified blockify(const RowMatrixXd& image, Index block_size, PadMode mode) {
  if (block_size < 1) throw ValidationError("blockify: block size must be >= 1");
  Blockified out{RowMatrixXd(), image.rows(), image.cols()};
  if (mode == PadMode::kCrop) {
    if (image.rows() < block_size || image.cols() < block_size)
      throw ValidationError("blockify: image smaller than block size in crop mode");
    out.image = image.topLeftCorner(image.rows() / block_size * block_size,
                                    image.cols() / block_size * block_size);
    return out;
  }
  const Index rows = (image.rows() + block_size - 1) / block_size * block_size;
  const Index cols = (image.cols() + block_size - 1) / block_size * block_size;
  out.image.resize(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c)
      out.image(r, c) = image(std::min(r, image.rows() - 1), std::min(c, image.cols() - 1));
  return out;
}

RowMatrixXd unblockify(const RowMatrixXd& image, Index rows, Index cols) {
  RowMatrixXd out(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c)
      out(r, c) = image(std::min(r, image.rows() - 1), std::min(c, image.cols() - 1));
  return out;
}

namespace {

RowMatrixXd reconstruct(const RowMatrixXd& padded, const EvalMatrix& m, Reconstructor kind,
                        const ComparisonConfig& cfg) {
  const Tensor x = as_tensor(padded);
  if (kind == Reconstructor::kLearned) return as_image(forward(x, m.matrix, *m.learned).output);
  return as_image(reconstruct_image(sample_image(x, m.matrix), m.matrix, cfg.solver));
}

struct CellKey {
  double ratio;
  Reconstructor reconstructor;
  bool operator<(const CellKey& o) const {
    return ratio < o.ratio || (ratio == o.ratio && reconstructor < o.reconstructor);
  }
};

double metric_gain(double value, double baseline) {
  if (std::isinf(value) && std::isinf(baseline) && (value > 0) == (baseline > 0)) return 0.0;
  return value - baseline;
}

}  // namespace

ComparisonReport run_comparison(const std::vector<NamedImage>& images,
                                const std::vector<EvalMatrix>& matrices,
                                const std::vector<double>& ratios,
                                const std::vector<Reconstructor>& reconstructors,
                                const ComparisonConfig& cfg) {
  if (images.empty()) throw ValidationError("run_comparison: no images");
  if (matrices.empty()) throw ValidationError("run_comparison: no matrices");
  cfg.solver.validate();
  for (size_t a = 0; a < matrices.size(); ++a)
    for (size_t b = a + 1; b < matrices.size(); ++b)
      if (matrices[a].label == matrices[b].label)
        throw ValidationError("run_comparison: duplicate matrix label '" + matrices[a].label + "'");

  // Pair each matrix with the ratios its geometry supports.
  std::vector<std::vector<double>> matched(matrices.size());
  for (size_t m = 0; m < matrices.size(); ++m) {
    const MeasurementMatrix& phi = matrices[m].matrix;
    phi.validate();
    std::ostringstream expected;
    for (double r : ratios) {
      const Index want = measurement_dim(r, phi.block_size);
      if (want == phi.n_b()) matched[m].push_back(r);
      expected << (expected.tellp() > 0 ? ", " : "") << "expected n_b=" << want << " for ratio " << r;
    }
    if (matched[m].empty())
      throw GeometryError("matrix '" + matrices[m].label + "' (block " +
                          std::to_string(phi.block_size) + "): " + expected.str() +
                          ", got n_b=" + std::to_string(phi.n_b()));
    for (Reconstructor rec : reconstructors)
      if (rec == Reconstructor::kLearned && !matrices[m].learned &&
          phi.provenance == Provenance::kLearned)
        throw ValidationError("missing checkpoint for learned matrix '" + matrices[m].label + "'");
  }

  ComparisonReport report;
  for (const NamedImage& img : images) {
    for (size_t m = 0; m < matrices.size(); ++m) {
      const EvalMatrix& em = matrices[m];
      const Blockified padded = blockify(img.pixels, em.matrix.block_size, cfg.pad);
      for (double ratio : matched[m]) {
        for (Reconstructor rec : reconstructors) {
          if (rec == Reconstructor::kLearned && !em.learned) continue;
          ComparisonRow row;
          row.image = img.name;
          row.matrix = em.label;
          row.ratio = ratio;
          row.reconstructor = rec;
          RowMatrixXd out = unblockify(reconstruct(padded.image, em, rec, cfg), padded.rows, padded.cols);
          row.psnr_db = psnr(out, img.pixels);
          row.ssim = ssim(out, img.pixels);
          if (cfg.keep_reconstructions) row.reconstruction = std::move(out);
          report.rows.push_back(std::move(row));
        }
      }
    }
  }

  // Means per (ratio, reconstructor, matrix), in first-appearance order.
  std::map<CellKey, std::vector<std::string>> labels;
  std::map<std::pair<CellKey, std::string>, std::pair<double, double>> sums;
  std::map<std::pair<CellKey, std::string>, long> counts;
  for (const ComparisonRow& row : report.rows) {
    const CellKey key{row.ratio, row.reconstructor};
    auto& list = labels[key];
    if (std::find(list.begin(), list.end(), row.matrix) == list.end()) list.push_back(row.matrix);
    auto& s = sums[{key, row.matrix}];
    s.first += row.psnr_db;
    s.second += row.ssim;
    ++counts[{key, row.matrix}];
  }
  for (const auto& [key, list] : labels) {
    std::vector<SummaryRow> means;
    for (const std::string& label : list) {
      const auto& s = sums[{key, label}];
      const double n = static_cast<double>(counts[{key, label}]);
      means.push_back({SummaryRow::Kind::kMean, label, key.ratio, key.reconstructor, s.first / n,
                       s.second / n});
    }
    size_t baseline = 0;
    for (size_t i = 0; i < list.size(); ++i) {
      const auto it = std::find_if(matrices.begin(), matrices.end(),
                                   [&](const EvalMatrix& e) { return e.label == list[i]; });
      if (it != matrices.end() && it->matrix.provenance == Provenance::kGaussian) {
        baseline = i;
        break;
      }
    }
    report.summary.insert(report.summary.end(), means.begin(), means.end());
    for (size_t i = 0; i < means.size(); ++i) {
      if (i == baseline && means.size() > 1) continue;
      report.summary.push_back({SummaryRow::Kind::kGain, list[i] + " - " + list[baseline],
                                key.ratio, key.reconstructor,
                                metric_gain(means[i].psnr_db, means[baseline].psnr_db),
                                metric_gain(means[i].ssim, means[baseline].ssim)});
    }
  }

  nlohmann::json echo;
  echo["solver"] = {{"lambda", cfg.solver.lambda},
                    {"max_iters", cfg.solver.max_iters},
                    {"rel_tol", cfg.solver.rel_tol},
                    {"accelerated", cfg.solver.accelerated},
                    {"lipschitz_iters", cfg.solver.lipschitz_iters}};
  echo["pad"] = cfg.pad == PadMode::kReplicate ? "replicate" : "crop";
  echo["ratios"] = ratios;
  for (const EvalMatrix& m : matrices)
    echo["matrices"].push_back({{"label", m.label},
                                {"provenance", to_string(m.matrix.provenance)},
                                {"n_b", m.matrix.n_b()},
                                {"n_B", m.matrix.n_B()},
                                {"alpha", m.matrix.sparsity_degree},
                                {"learned_reconstructor", m.learned.has_value()}});
  for (Reconstructor r : reconstructors) echo["reconstructors"].push_back(to_string(r));
  report.config_echo = echo.dump(2);
  return report;
}

std::string format_metric(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string report_csv(const ComparisonReport& report) {
  std::ostringstream os;
  os << "image,matrix,ratio,reconstructor,psnr_db,ssim\n";
  for (const auto& r : report.rows)
    os << r.image << ',' << r.matrix << ',' << format_metric(r.ratio) << ','
       << to_string(r.reconstructor) << ',' << format_metric(r.psnr_db) << ','
       << format_metric(r.ssim) << '\n';
  return os.str();
}

std::string summary_csv(const ComparisonReport& report) {
  std::ostringstream os;
  os << "kind,matrix,ratio,reconstructor,psnr_db,ssim\n";
  for (const auto& r : report.summary)
    os << (r.kind == SummaryRow::Kind::kMean ? "mean" : "gain") << ',' << r.matrix << ','
       << format_metric(r.ratio) << ',' << to_string(r.reconstructor) << ','
       << format_metric(r.psnr_db) << ',' << format_metric(r.ssim) << '\n';
  return os.str();
}

}  // namespace dsmm
