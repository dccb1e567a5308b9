#include "distillwsd/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "distillwsd/error.hpp"

namespace distillwsd {

std::string encode_ppm(const Image& image) {
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.rgb.data()), image.rgb.size());
  return out;
}

Image decode_ppm(std::string_view bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&]() -> std::size_t {
    skip_space();
    std::size_t value = 0;
    std::size_t digits = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      ++pos;
      ++digits;
    }
    if (digits == 0) throw InputError("ppm: malformed header");
    return value;
  };
  if (bytes.substr(0, 2) != "P6") throw InputError("ppm: not a binary P6 file");
  pos = 2;
  const std::size_t width = read_uint();
  const std::size_t height = read_uint();
  const std::size_t maxval = read_uint();
  if (maxval != 255) throw InputError("ppm: only maxval 255 is supported");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw InputError("ppm: malformed header");
  }
  ++pos;
  Image image(width, height);
  if (bytes.size() - pos < image.rgb.size()) throw InputError("ppm: truncated pixel data");
  std::copy_n(bytes.data() + pos, image.rgb.size(), reinterpret_cast<char*>(image.rgb.data()));
  return image;
}

void write_ppm(const Image& image, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot open " + path.string() + " for writing");
  const std::string bytes = encode_ppm(image);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open image " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return decode_ppm(ss.str());
}

Image resize_bilinear(const Image& image, std::size_t width, std::size_t height) {
  if (image.width == width && image.height == height) return image;
  Image out(width, height);
  const double sx = static_cast<double>(image.width) / static_cast<double>(width);
  const double sy = static_cast<double>(image.height) / static_cast<double>(height);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(image.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(image.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = (1 - wy) * ((1 - wx) * image.at(y0, x0, c) + wx * image.at(y0, x1, c)) +
                         wy * ((1 - wx) * image.at(y1, x0, c) + wx * image.at(y1, x1, c));
        out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return out;
}

template <typename T>
void image_to_chw(const Image& image, T* dst) {
  const std::size_t hw = image.width * image.height;
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      dst[c * hw + i] = static_cast<T>(image.rgb[i * 3 + c]) / T(255) - T(0.5);
    }
  }
}

template <typename T>
Tensor<T> images_to_batch(std::span<const Image* const> images) {
  if (images.empty()) throw InputError("images_to_batch: empty batch");
  const std::size_t h = images[0]->height, w = images[0]->width;
  Tensor<T> batch({images.size(), 3, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n]->height != h || images[n]->width != w) {
      throw DimensionError("images_to_batch: images differ in size");
    }
    image_to_chw(*images[n], batch.data() + n * 3 * h * w);
  }
  return batch;
}

template void image_to_chw<float>(const Image&, float*);
template void image_to_chw<double>(const Image&, double*);
template Tensor<float> images_to_batch<float>(std::span<const Image* const>);
template Tensor<double> images_to_batch<double>(std::span<const Image* const>);

}  // namespace distillwsd
