#include "ecgr/toy.hpp"

#include "ecgr/io.hpp"
#include "ecgr/seed.hpp"

#include <fmt/format.h>
#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include <random>

namespace ecgr::toy {

namespace {

// Facial geometry per class, in units of the head radius.
struct Expression {
  double mouth_curve;  // > 0 smiles, < 0 frowns
  double mouth_open;   // vertical opening
  double mouth_width;
  double brow_tilt;    // > 0 inner ends down
  double brow_lift;
  double eye_size;
  bool crooked;        // asymmetric mouth
};

Expression expression(EmotionClass c) {
  switch (c) {
    case EmotionClass::fear: return {-0.05, 0.18, 0.45, -0.35, 0.16, 0.16, false};
    case EmotionClass::anger: return {-0.02, 0.0, 0.40, 0.50, -0.04, 0.09, false};
    case EmotionClass::happiness: return {0.28, 0.04, 0.60, 0.0, 0.04, 0.10, false};
    case EmotionClass::sadness: return {-0.26, 0.0, 0.45, -0.45, 0.0, 0.10, false};
    case EmotionClass::disgust: return {-0.10, 0.04, 0.45, 0.30, -0.02, 0.07, true};
    case EmotionClass::surprise: return {0.0, 0.34, 0.24, 0.0, 0.24, 0.15, false};
    case EmotionClass::neutral: return {0.0, 0.0, 0.45, 0.0, 0.06, 0.11, false};
  }
  return {};
}

}  // namespace

Style domain_style(int domain) {
  if (domain < 0 || domain >= kNumDomains)
    throw ValidationError(fmt::format("toy domain {} outside 0..{}", domain, kNumDomains - 1));
  return static_cast<Style>(domain);
}

std::string domain_name(int domain) {
  switch (domain_style(domain)) {
    case Style::outline: return "outline";
    case Style::inverted: return "inverted";
    case Style::striped: return "striped";
    case Style::grain: return "grain";
  }
  return {};
}

Image render_face(EmotionClass c, Style style, int image_size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  constexpr int kScale = 4;  // draw supersampled, then shrink
  const int size = image_size * kScale;
  const double s = size;

  double radius = 0.36 * s * (1.0 + 0.06 * u(rng));
  if (style == Style::striped) radius *= 0.82;
  if (style == Style::grain) radius *= 1.12;
  const cv::Point2d center(s / 2 + 0.05 * s * u(rng), s / 2 + 0.05 * s * u(rng));
  const Expression e = expression(c);
  auto jitter = [&](double v, double amount) { return v + amount * u(rng); };

  double bg = 0.0;
  double face = 0.0;
  double ink = 1.0;
  switch (style) {
    case Style::outline: bg = 0.05; face = 0.05; ink = 0.95; break;
    case Style::inverted: bg = 0.92; face = 0.75; ink = 0.05; break;
    case Style::striped: bg = 0.3; face = 0.55; ink = 0.95; break;
    case Style::grain: bg = 0.45; face = 0.3; ink = 0.8; break;
  }
  cv::Mat m(size, size, CV_32F, cv::Scalar(bg));
  if (style == Style::striped) {
    const double phase = (u(rng) + 1.0) * 4.0 * kScale;
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        if (std::fmod(x + y + phase, 8.0 * kScale) < 4.0 * kScale) m.at<float>(y, x) = 0.12f;
  }
  const int thick = std::max(1, static_cast<int>(std::lround(0.07 * radius)));
  auto pt = [&](double dx, double dy) { return cv::Point(static_cast<int>(center.x + dx * radius), static_cast<int>(center.y + dy * radius)); };

  cv::ellipse(m, pt(0, 0), cv::Size(static_cast<int>(radius * 0.85), static_cast<int>(radius)), 0, 0, 360,
              cv::Scalar(face), cv::FILLED, cv::LINE_AA);
  cv::ellipse(m, pt(0, 0), cv::Size(static_cast<int>(radius * 0.85), static_cast<int>(radius)), 0, 0, 360,
              cv::Scalar(ink), thick, cv::LINE_AA);

  const double eye_r = jitter(e.eye_size, 0.015) * radius;
  for (int side : {-1, 1}) {
    cv::ellipse(m, pt(side * 0.35, -0.2), cv::Size(static_cast<int>(eye_r), static_cast<int>(eye_r * 0.8)), 0, 0,
                360, cv::Scalar(ink), cv::FILLED, cv::LINE_AA);
    const double lift = jitter(e.brow_lift, 0.03);
    const double tilt = jitter(e.brow_tilt, 0.05) * 0.3;
    cv::line(m, pt(side * 0.55, -0.45 - lift - tilt), pt(side * 0.15, -0.45 - lift + tilt), cv::Scalar(ink), thick,
             cv::LINE_AA);
  }

  const double width = jitter(e.mouth_width, 0.04);
  const double curve = jitter(e.mouth_curve, 0.04);
  const double open = std::max(0.0, jitter(e.mouth_open, 0.03));
  const double my = 0.45;
  std::vector<cv::Point> upper;
  std::vector<cv::Point> lower;
  for (int i = 0; i <= 16; ++i) {
    const double t = -1.0 + i / 8.0;
    double y = my - curve * (1.0 - t * t) + (e.crooked ? 0.12 * t : 0.0);
    upper.push_back(pt(t * width, y - open * std::sqrt(std::max(0.0, 1.0 - t * t)) * 0.5));
    lower.push_back(pt(t * width, y + open * std::sqrt(std::max(0.0, 1.0 - t * t)) * 0.5));
  }
  if (open > 0.05) {
    std::vector<cv::Point> poly = upper;
    poly.insert(poly.end(), lower.rbegin(), lower.rend());
    cv::fillPoly(m, std::vector<std::vector<cv::Point>>{poly}, cv::Scalar(ink), cv::LINE_AA);
  } else {
    cv::polylines(m, std::vector<std::vector<cv::Point>>{upper}, false, cv::Scalar(ink), thick, cv::LINE_AA);
  }

  cv::Mat small;
  cv::resize(m, small, cv::Size(image_size, image_size), 0, 0, cv::INTER_AREA);
  if (style == Style::grain) {
    cv::GaussianBlur(small, small, cv::Size(3, 3), 0.8);
    std::normal_distribution<float> noise(0.0f, 0.09f);
    for (int y = 0; y < small.rows; ++y)
      for (int x = 0; x < small.cols; ++x) small.at<float>(y, x) += noise(rng);
  } else {
    std::normal_distribution<float> noise(0.0f, 0.03f);
    for (int y = 0; y < small.rows; ++y)
      for (int x = 0; x < small.cols; ++x) small.at<float>(y, x) += noise(rng);
  }
  Image img(image_size, image_size);
  for (int y = 0; y < image_size; ++y)
    for (int x = 0; x < image_size; ++x) img(y, x) = std::clamp(small.at<float>(y, x), 0.0f, 1.0f);
  return img;
}

Dataset make_domain(int domain, int per_class, int image_size, std::uint64_t seed) {
  if (per_class < 2) throw ValidationError("toy domains need at least 2 images per class");
  if (image_size < 16) throw ValidationError("toy images must be at least 16 pixels wide");
  const Style style = domain_style(domain);
  Dataset ds;
  ds.name = domain_name(domain);
  ds.image_size = image_size;
  for (int c = 0; c < kNumClasses; ++c) {
    const EmotionClass label = class_from_id(c);
    for (int i = 0; i < per_class; ++i) {
      const auto s = derive_seed(seed, ds.name, static_cast<std::uint64_t>(c * 1000003 + i));
      ds.samples.push_back({{render_face(label, style, image_size, s), label,
                             fmt::format("{}/{}/{:04d}", ds.name, class_name(label), i)},
                            1.0});
    }
  }
  return ds;
}

void write_domain(const Dataset& ds, const std::filesystem::path& root) {
  std::array<int, kNumClasses> index{};
  for (const auto& s : ds.samples) {
    const auto c = static_cast<std::size_t>(class_id(s.image.label));
    io::write_png(root / std::string(kClassNames[c]) / fmt::format("{:04d}.png", index[c]++), s.image.pixels);
  }
}

}  // namespace ecgr::toy
