#include "ecgr/io.hpp"

#include <fmt/format.h>
#include <openssl/evp.h>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <atomic>
#include <fstream>
#include <memory>
#include <sstream>
#include <unistd.h>

namespace ecgr::io {

namespace fs = std::filesystem;

void write_file_atomic(const fs::path& path, std::string_view contents) {
  static std::atomic<unsigned> counter{0};
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw ValidationError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  const fs::path tmp = path.string() + fmt::format(".tmp{}.{}", ::getpid(), counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      fs::remove(tmp);
      throw ValidationError("write failed for " + path.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw ValidationError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string sha256_hex(std::string_view bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1)
    throw std::runtime_error("sha256 failed");
  std::string hex;
  hex.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

void write_png(const fs::path& path, const Image& image) {
  cv::Mat m(static_cast<int>(image.rows()), static_cast<int>(image.cols()), CV_8UC1);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c)
      m.at<unsigned char>(r, c) =
          static_cast<unsigned char>(std::lround(std::clamp(image(r, c), 0.0f, 1.0f) * 255.0f));
  std::vector<unsigned char> buf;
  if (!cv::imencode(".png", m, buf)) throw ValidationError("cannot encode PNG for " + path.string());
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(buf.data()), buf.size()));
}

Image contact_sheet(const std::vector<std::vector<Image>>& rows, int image_size, int gap) {
  std::size_t cols = 0;
  for (const auto& r : rows) cols = std::max(cols, r.size());
  const auto n_rows = static_cast<Eigen::Index>(rows.size());
  const auto n_cols = static_cast<Eigen::Index>(cols);
  const Eigen::Index cell = image_size + gap;
  Image sheet = Image::Ones(std::max<Eigen::Index>(n_rows * cell - gap, 1), std::max<Eigen::Index>(n_cols * cell - gap, 1));
  for (Eigen::Index r = 0; r < n_rows; ++r) {
    const auto& row = rows[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(row.size()); ++c) {
      const Image& img = row[static_cast<std::size_t>(c)];
      if (img.size() == 0) continue;
      if (img.rows() != image_size || img.cols() != image_size)
        throw ValidationError("contact sheet image has the wrong size");
      sheet.block(r * cell, c * cell, image_size, image_size) = img;
    }
  }
  return sheet;
}

}  // namespace ecgr::io
