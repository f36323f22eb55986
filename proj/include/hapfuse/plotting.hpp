#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace hapfuse {

/// Minimal deterministic SVG charts; no third-party plotting dependency.
void svg_bar_chart(const std::filesystem::path& path, const std::string& title,
                   const std::vector<std::string>& labels,
                   const std::vector<double>& values);

void svg_line_chart(const std::filesystem::path& path, const std::string& title,
                    const std::vector<double>& xs, const std::vector<double>& ys);

}  // namespace hapfuse
