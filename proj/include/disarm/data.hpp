#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "disarm/rng.hpp"
#include "disarm/vae.hpp"

namespace disarm {

// Grayscale images in [0, 1], one per column, row-major pixel order.
struct ImageSet {
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  Eigen::MatrixXd pixels;

  Eigen::Index count() const { return pixels.cols(); }
  Eigen::Index pixel_count() const { return rows * cols; }
};

class IdxParseError : public std::runtime_error {
 public:
  IdxParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;

// IDX3 unsigned-byte images: big-endian magic, count, rows, cols, then pixels.
ImageSet parse_idx_images(const std::vector<std::uint8_t>& bytes);
ImageSet load_idx_images(const std::filesystem::path& path);

// Seeded 16x16-style patterns: a few bar and blob prototypes, jittered and
// blurred so that pixel intensities are genuinely grey.
ImageSet synthetic_images(Eigen::Index count, Eigen::Index side, const Rng& rng);

Eigen::VectorXd mean_image(const ImageSet& images);

// Fresh Bernoulli(intensity) pixels for the selected columns.
Eigen::MatrixXd binarize(const ImageSet& images, const std::vector<Eigen::Index>& columns, Rng& rng);

// Dynamic binarization plus centering for one mini-batch.
Batch make_batch(const ImageSet& images, const Eigen::VectorXd& mean,
                 const std::vector<Eigen::Index>& columns, Rng& rng);

}  // namespace disarm
