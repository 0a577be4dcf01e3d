#include "ecgr/data.hpp"

#include <fmt/format.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace fs = std::filesystem;

namespace ecgr {

std::optional<EmotionClass> class_from_name(std::string_view name) {
  for (int i = 0; i < kNumClasses; ++i)
    if (kClassNames[static_cast<std::size_t>(i)] == name) return static_cast<EmotionClass>(i);
  return std::nullopt;
}

EmotionClass class_from_id(int id) {
  if (id < 0 || id >= kNumClasses) throw ValidationError(fmt::format("class id {} outside 0..{}", id, kNumClasses - 1));
  return static_cast<EmotionClass>(id);
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::all: return "all";
  }
  return "all";
}

std::array<int, kNumClasses> Dataset::class_counts() const {
  std::array<int, kNumClasses> counts{};
  for (const auto& s : samples) ++counts[static_cast<std::size_t>(class_id(s.image.label))];
  return counts;
}

std::vector<LabeledImage> Dataset::images_of(EmotionClass c) const {
  std::vector<LabeledImage> out;
  for (const auto& s : samples)
    if (s.image.label == c) out.push_back(s.image);
  return out;
}

std::vector<LabeledImage> Dataset::images() const {
  std::vector<LabeledImage> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.image);
  return out;
}

namespace {

Image read_gray(const fs::path& file, int image_size) {
  cv::Mat raw = cv::imread(file.string(), cv::IMREAD_GRAYSCALE);
  if (raw.empty()) throw ValidationError("unreadable image file: " + file.string());
  cv::Mat resized;
  if (raw.rows != image_size || raw.cols != image_size) {
    const bool shrinking = raw.rows > image_size || raw.cols > image_size;
    cv::resize(raw, resized, cv::Size(image_size, image_size), 0, 0, shrinking ? cv::INTER_AREA : cv::INTER_LINEAR);
  } else {
    resized = raw;
  }
  Image img(image_size, image_size);
  for (int y = 0; y < image_size; ++y)
    for (int x = 0; x < image_size; ++x) img(y, x) = static_cast<float>(resized.at<std::uint8_t>(y, x)) / 255.0f;
  return img;
}

}  // namespace

Dataset load_image_dataset(const fs::path& root, int image_size, std::string name) {
  if (image_size < 1) throw ValidationError("image size must be positive");
  if (!fs::is_directory(root)) throw ValidationError("dataset root is not a directory: " + root.string());

  std::vector<std::string> missing;
  for (auto cname : kClassNames)
    if (!fs::is_directory(root / std::string(cname))) missing.emplace_back(cname);
  if (!missing.empty()) throw ValidationError(fmt::format("missing classes: {}", fmt::join(missing, ", ")));

  Dataset ds{std::move(name), Split::all, image_size, {}};
  for (int c = 0; c < kNumClasses; ++c) {
    const fs::path dir = root / std::string(kClassNames[static_cast<std::size_t>(c)]);
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      if (entry.path().filename().string().starts_with(".")) continue;
      files.push_back(entry.path());
    }
    if (files.empty()) throw ValidationError("class directory has no images: " + dir.string());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      ds.samples.push_back({LabeledImage{read_gray(f, image_size), static_cast<EmotionClass>(c),
                                         fs::relative(f, root).generic_string()},
                            1.0});
    }
  }
  return ds;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ValidationError("test_fraction must lie in (0, 1)");

  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
    by_class[static_cast<std::size_t>(class_id(ds.samples[i].image.label))].push_back(i);

  std::vector<bool> is_test(ds.samples.size(), false);
  std::mt19937_64 rng(seed);
  for (int c = 0; c < kNumClasses; ++c) {
    auto& idx = by_class[static_cast<std::size_t>(c)];
    if (idx.empty()) continue;
    if (idx.size() < 2)
      throw ValidationError(fmt::format("dataset '{}': class '{}' has fewer than 2 samples", ds.name,
                                        kClassNames[static_cast<std::size_t>(c)]));
    // The epsilon absorbs representation error such as 10 * 0.7 = 7.000000000000001.
    auto n_test = static_cast<std::size_t>(std::ceil(static_cast<double>(idx.size()) * test_fraction - 1e-9));
    n_test = std::clamp<std::size_t>(n_test, 1, idx.size() - 1);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < n_test; ++k) is_test[idx[k]] = true;
  }

  Dataset train{ds.name, Split::train, ds.image_size, {}};
  Dataset test{ds.name, Split::test, ds.image_size, {}};
  for (std::size_t i = 0; i < ds.samples.size(); ++i) (is_test[i] ? test : train).samples.push_back(ds.samples[i]);
  return {std::move(train), std::move(test)};
}

Dataset unify_datasets(const Dataset& target, const Dataset& synthetic) {
  if (!synthetic.empty() && !target.empty() && target.image_size != synthetic.image_size)
    throw ValidationError(fmt::format("cannot unify '{}' ({}px) with '{}' ({}px): image sizes differ", target.name,
                                      target.image_size, synthetic.name, synthetic.image_size));
  Dataset out{target.name + "+" + synthetic.name, target.split, target.image_size ? target.image_size : synthetic.image_size,
              {}};
  out.samples.reserve(target.size() + synthetic.size());
  out.samples.insert(out.samples.end(), target.samples.begin(), target.samples.end());
  out.samples.insert(out.samples.end(), synthetic.samples.begin(), synthetic.samples.end());
  return out;
}

void validate_dataset(const Dataset& ds) {
  for (const auto& s : ds.samples) {
    const auto& px = s.image.pixels;
    if (px.rows() != ds.image_size || px.cols() != ds.image_size)
      throw ValidationError(fmt::format("{}: image {} is {}x{}, expected {}x{}", ds.name, s.image.source_id, px.rows(),
                                        px.cols(), ds.image_size, ds.image_size));
    if (!px.allFinite() || px.minCoeff() < 0.0f || px.maxCoeff() > 1.0f)
      throw ValidationError(fmt::format("{}: image {} has pixels outside [0, 1]", ds.name, s.image.source_id));
    if (!(s.weight > 0.0 && s.weight <= 1.0))
      throw ValidationError(fmt::format("{}: sample {} has weight {} outside (0, 1]", ds.name, s.image.source_id, s.weight));
  }
}

std::string manifest_csv(const Dataset& ds) {
  std::ostringstream out;
  out << "source_id,class_id,weight,split\n";
  for (const auto& s : ds.samples)
    out << s.image.source_id << ',' << class_id(s.image.label) << ',' << fmt::format("{:.8f}", s.weight) << ','
        << split_name(ds.split) << '\n';
  return out.str();
}

Eigen::MatrixXf to_batch(const std::vector<LabeledImage>& images) {
  if (images.empty()) return {};
  const Eigen::Index d = images.front().pixels.size();
  Eigen::MatrixXf batch(d, static_cast<Eigen::Index>(images.size()));
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].pixels.size() != d) throw ValidationError("to_batch: images have different sizes");
    batch.col(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::VectorXf>(images[i].pixels.data(), d);
  }
  return batch;
}

Eigen::MatrixXf to_batch(const std::vector<WeightedSample>& samples) {
  if (samples.empty()) return {};
  const Eigen::Index d = samples.front().image.pixels.size();
  Eigen::MatrixXf batch(d, static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].image.pixels.size() != d) throw ValidationError("to_batch: images have different sizes");
    batch.col(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::VectorXf>(samples[i].image.pixels.data(), d);
  }
  return batch;
}

}  // namespace ecgr
