#include "disarm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>

namespace disarm {

namespace {

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset) {
  if (bytes.size() < offset + 4) throw IdxParseError("IDX header truncated", offset);
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace

ImageSet parse_idx_images(const std::vector<std::uint8_t>& bytes) {
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != kIdxImageMagic) {
    throw IdxParseError("IDX: expected image magic 0x00000803, got 0x" + [&] {
      char buf[9];
      std::snprintf(buf, sizeof buf, "%08x", magic);
      return std::string(buf);
    }(), 0);
  }
  const std::uint32_t count = read_be32(bytes, 4);
  const std::uint32_t rows = read_be32(bytes, 8);
  const std::uint32_t cols = read_be32(bytes, 12);
  const std::size_t pixels = std::size_t{rows} * cols;
  const std::size_t need = 16 + std::size_t{count} * pixels;
  if (bytes.size() < need) throw IdxParseError("IDX pixel data truncated", bytes.size());
  if (bytes.size() > need) throw IdxParseError("IDX file has trailing bytes", need);

  ImageSet set;
  set.rows = rows;
  set.cols = cols;
  set.pixels.resize(static_cast<Eigen::Index>(pixels), static_cast<Eigen::Index>(count));
  const std::uint8_t* p = bytes.data() + 16;
  for (std::uint32_t n = 0; n < count; ++n) {
    for (std::size_t i = 0; i < pixels; ++i) {
      set.pixels(static_cast<Eigen::Index>(i), n) = static_cast<double>(*p++) / 255.0;
    }
  }
  return set;
}

ImageSet load_idx_images(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return parse_idx_images(bytes);
}

ImageSet synthetic_images(Eigen::Index count, Eigen::Index side, const Rng& rng) {
  if (count < 1 || side < 4) throw std::invalid_argument("synthetic_images: need count >= 1 and side >= 4");
  ImageSet set;
  set.rows = side;
  set.cols = side;
  set.pixels.resize(side * side, count);
  for (Eigen::Index n = 0; n < count; ++n) {
    Rng r = rng.split(static_cast<std::uint64_t>(n));
    Eigen::MatrixXd img = Eigen::MatrixXd::Zero(side, side);
    const int kind = static_cast<int>(r.uniform() * 4.0);
    const auto pick = [&](Eigen::Index lo, Eigen::Index hi) {
      return lo + static_cast<Eigen::Index>(r.uniform() * static_cast<double>(hi - lo));
    };
    if (kind == 0) {  // horizontal bars
      const Eigen::Index bars = pick(1, 3);
      for (Eigen::Index k = 0; k < bars; ++k) img.row(pick(1, side - 1)).setOnes();
    } else if (kind == 1) {  // vertical bars
      const Eigen::Index bars = pick(1, 3);
      for (Eigen::Index k = 0; k < bars; ++k) img.col(pick(1, side - 1)).setOnes();
    } else {  // one or two gaussian blobs
      const int blobs = kind - 1;
      for (int k = 0; k < blobs; ++k) {
        const double cy = 3.0 + r.uniform() * static_cast<double>(side - 6);
        const double cx = 3.0 + r.uniform() * static_cast<double>(side - 6);
        const double s = 1.2 + r.uniform() * 1.5;
        for (Eigen::Index y = 0; y < side; ++y) {
          for (Eigen::Index x = 0; x < side; ++x) {
            const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
            img(y, x) = std::max(img(y, x), std::exp(-d2 / (2.0 * s * s)));
          }
        }
      }
    }
    for (Eigen::Index y = 0; y < side; ++y) {
      for (Eigen::Index x = 0; x < side; ++x) {
        const double v = 0.9 * img(y, x) + 0.05 * r.uniform();
        set.pixels(y * side + x, n) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return set;
}

Eigen::VectorXd mean_image(const ImageSet& images) {
  if (images.count() == 0) throw std::invalid_argument("mean_image: empty image set");
  return images.pixels.rowwise().mean();
}

Eigen::MatrixXd binarize(const ImageSet& images, const std::vector<Eigen::Index>& columns, Rng& rng) {
  Eigen::MatrixXd out(images.pixel_count(), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j) {
    const auto col = images.pixels.col(columns[j]);
    for (Eigen::Index i = 0; i < col.size(); ++i) {
      out(i, static_cast<Eigen::Index>(j)) = rng.uniform() < col(i) ? 1.0 : 0.0;
    }
  }
  return out;
}

Batch make_batch(const ImageSet& images, const Eigen::VectorXd& mean,
                 const std::vector<Eigen::Index>& columns, Rng& rng) {
  Batch batch;
  batch.binary = binarize(images, columns, rng);
  batch.centered.resize(images.pixel_count(), batch.binary.cols());
  for (std::size_t j = 0; j < columns.size(); ++j) {
    batch.centered.col(static_cast<Eigen::Index>(j)) = images.pixels.col(columns[j]) - mean;
  }
  return batch;
}

}  // namespace disarm
