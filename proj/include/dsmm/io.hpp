#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dsmm/reconstruction.hpp"
#include "dsmm/sampling.hpp"
#include "dsmm/tensor.hpp"

namespace dsmm::io {

namespace fs = std::filesystem;

// Writes to a sibling temporary file and renames it over `path`.
void atomic_write(const fs::path& path, const std::string& bytes);
std::string read_file(const fs::path& path);

// Grayscale image on [0,1]. 8-bit PGM (P2/P5, any maxval up to 65535) and
// PNG are accepted; colour PNGs are reduced with BT.601 luma weights.
RowMatrixXd read_image(const fs::path& path);
// 8-bit output, format chosen by extension (.png, otherwise PGM).
void write_image(const fs::path& path, const RowMatrixXd& image);
std::string encode_pgm(const RowMatrixXd& image);

// *.png / *.pgm files directly inside dir, sorted by filename.
std::vector<fs::path> list_images(const fs::path& dir);

// DSMM1 binary, little-endian:
//   "DSMM" u32 version=1 u32 n_b u32 n_B u32 block_size f64 alpha
//   u8 provenance, then n_b*n_B f64 entries row-major.
std::string encode_matrix(const MeasurementMatrix& m);
MeasurementMatrix decode_matrix(const std::string& bytes);

// Sparse text: header "n_b n_B B alpha nnz", then one "row col value" line
// per nonzero in row-major order; values carry 17 significant digits.
std::string encode_matrix_text(const MeasurementMatrix& m);
MeasurementMatrix decode_matrix_text(const std::string& text);

// Either format, detected from the magic bytes.
MeasurementMatrix read_matrix(const fs::path& path);

// DSMN1 checkpoint, little-endian:
//   "DSMN" u32 version=1 u32 block_size f64 alpha u8 residual u32 count
//   then `count` tensors, each: u32 name_len, name bytes, u32 rank,
//   rank x u32 extents, f64 data row-major.
// The first tensor is "theta" (unconstrained sampling kernels, [n_b, n_B]),
// followed by ReconstructionParams::tensor_names() in order.
struct Checkpoint {
  SamplingLayerState sampling;
  ReconstructionParams recon;
};
std::string encode_checkpoint(const SamplingLayerState& sampling, const ReconstructionParams& recon);
Checkpoint decode_checkpoint(const std::string& bytes);

// DSMY1 measurement file, little-endian:
//   "DSMY" u32 version=1 u32 block_size u32 rows u32 cols (original image)
//   u32 n_b u32 h u32 w, then n_b*h*w f64 in [channel][h][w] order.
struct MeasurementFile {
  Index block_size = 0;
  Index rows = 0;
  Index cols = 0;
  Tensor measurements;  // [1, n_b, h, w]
};
std::string encode_measurements(const MeasurementFile& m);
MeasurementFile decode_measurements(const std::string& bytes);

}  // namespace dsmm::io
