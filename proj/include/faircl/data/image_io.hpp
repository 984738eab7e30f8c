#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace faircl {

/// Interleaved 8-bit image (HWC).
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 0;  // 1 or 3
    std::vector<std::uint8_t> pixels;
};

/// PNG or JPEG, picked by magic bytes. Alpha is dropped, palettes expanded.
/// Raises ValidationError when the file is unreadable.
[[nodiscard]] Image read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

/// Converts to `channels` (grey <-> RGB), resizes bilinearly to height x
/// width, and returns CHW values in [0, 1]. Same-size input is not resampled.
[[nodiscard]] std::vector<double> image_to_chw(const Image& image, std::size_t channels, std::size_t height,
                                               std::size_t width);

}  // namespace faircl
