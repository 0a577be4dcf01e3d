#pragma once

#include "ecgr/data.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ecgr::toy {

/// Procedural stand-in domains: cartoon faces whose mouth, brows and eyes
/// encode the seven classes, rendered in a domain-specific style.
enum class Style { outline, inverted, striped, grain };

inline constexpr int kNumDomains = 4;

[[nodiscard]] Style domain_style(int domain);
[[nodiscard]] std::string domain_name(int domain);

/// `per_class` images of every class for domain `domain`, deterministic in
/// (domain, seed). Split is `all`; source ids are "<domain>/<class>/<i>".
[[nodiscard]] Dataset make_domain(int domain, int per_class, int image_size, std::uint64_t seed);

/// One face of class `c` in `style`.
[[nodiscard]] Image render_face(EmotionClass c, Style style, int image_size, std::uint64_t seed);

/// Writes `<root>/<class>/<index>.png` so the set can be read back by
/// load_image_dataset.
void write_domain(const Dataset& ds, const std::filesystem::path& root);

}  // namespace ecgr::toy
