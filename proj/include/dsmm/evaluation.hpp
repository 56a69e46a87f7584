#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dsmm/cs_solver.hpp"
#include "dsmm/reconstruction.hpp"
#include "dsmm/sampling.hpp"

namespace dsmm {

// i.i.d. N(0,1) entries from the "grm" stream of seed, rows normalized to
// unit L2 norm. n_B must be a perfect square.
MeasurementMatrix generate_grm(Index n_b, Index n_B, std::uint64_t seed);

enum class PadMode { kReplicate, kCrop };

struct Blockified {
  RowMatrixXd image;
  Index rows = 0;  // original extents
  Index cols = 0;
};

// Replicate-pads the bottom/right edges to the next multiple of B, or crops
// down to the previous multiple.
Blockified blockify(const RowMatrixXd& image, Index block_size, PadMode mode);
// Back to the original extents: crops padding, or edge-extends a cropped image.
RowMatrixXd unblockify(const RowMatrixXd& image, Index rows, Index cols);

inline Tensor as_tensor(const RowMatrixXd& image) {
  return Tensor({1, 1, image.rows(), image.cols()},
                Eigen::Map<const Eigen::VectorXd>(image.data(), image.size()));
}
inline RowMatrixXd as_image(const Tensor& t) {
  return Eigen::Map<const RowMatrixXd>(t.data(), t.dim(2), t.dim(3));
}

enum class Reconstructor { kIsta, kLearned };
const char* to_string(Reconstructor r);

struct NamedImage {
  std::string name;
  RowMatrixXd pixels;
};

struct EvalMatrix {
  std::string label;
  MeasurementMatrix matrix;
  // Reconstructor trained jointly with this matrix, when one is known.
  std::optional<ReconstructionParams> learned;
};

struct ComparisonConfig {
  SolverConfig solver;
  PadMode pad = PadMode::kReplicate;
  bool keep_reconstructions = false;
};

struct ComparisonRow {
  std::string image;
  std::string matrix;
  double ratio = 0.0;
  Reconstructor reconstructor = Reconstructor::kIsta;
  double psnr_db = 0.0;
  double ssim = 0.0;
  RowMatrixXd reconstruction;  // filled when keep_reconstructions is set
};

struct SummaryRow {
  enum class Kind { kMean, kGain } kind = Kind::kMean;
  std::string matrix;  // for gains: "<matrix> - <baseline>"
  double ratio = 0.0;
  Reconstructor reconstructor = Reconstructor::kIsta;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct ComparisonReport {
  std::vector<ComparisonRow> rows;
  std::vector<SummaryRow> summary;
  std::string config_echo;  // JSON
};

// Raised when no requested ratio matches a matrix's n_b.
class GeometryError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Each matrix is evaluated at every ratio whose measurement_dim matches its
// n_b. Gain rows compare every matrix against the first Gaussian matrix of
// the same ratio (or the first matrix when there is none).
ComparisonReport run_comparison(const std::vector<NamedImage>& images,
                                const std::vector<EvalMatrix>& matrices,
                                const std::vector<double>& ratios,
                                const std::vector<Reconstructor>& reconstructors,
                                const ComparisonConfig& cfg);

std::string report_csv(const ComparisonReport& report);
std::string summary_csv(const ComparisonReport& report);
std::string format_metric(double v);

}  // namespace dsmm
