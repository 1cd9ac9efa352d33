#include "dmlganr/image_io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "dmlganr/binary_io.hpp"

namespace dmlganr {

namespace {

constexpr std::uint32_t kDumpVersion = 1;

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return is;
}

}  // namespace

void write_image_dump(const Tensor& images, const std::filesystem::path& path) {
  if (images.rank() != 4) throw DimensionError("image dump expects an NCHW tensor");
  auto os = open_out(path);
  io::put_magic(os, "DMLI");
  io::put<std::uint32_t>(os, kDumpVersion);
  for (Index a = 0; a < 4; ++a) io::put<std::uint32_t>(os, static_cast<std::uint32_t>(images.dim(a)));
  for (double v : images.values()) io::put<float>(os, static_cast<float>(v));
  if (!os) throw IoError("write failed: " + path.string());
}

Tensor read_image_dump(const std::filesystem::path& path) {
  auto is = open_in(path);
  io::expect_magic(is, "DMLI");
  const auto version = io::get<std::uint32_t>(is, "version");
  if (version != kDumpVersion) throw FormatError("unsupported DMLI version " + std::to_string(version));
  Shape shape(4);
  for (auto& d : shape) d = io::get<std::uint32_t>(is, "shape");
  Tensor out(shape);
  for (double& v : out.values()) v = io::get<float>(is, "pixels");
  return out;
}

void write_ppm(const Tensor& image, const std::filesystem::path& path) {
  if (image.rank() != 3 || (image.dim(0) != 3 && image.dim(0) != 1)) {
    throw DimensionError("PPM export expects a 3xHxW or 1xHxW image");
  }
  const Index h = image.dim(1), w = image.dim(2);
  auto os = open_out(path);
  os << "P6\n" << w << " " << h << "\n255\n";
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      for (Index c = 0; c < 3; ++c) {
        const double v = image(image.dim(0) == 3 ? c : 0, y, x);
        const double scaled = std::round((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5);
        os.put(static_cast<char>(static_cast<std::uint8_t>(scaled)));
      }
    }
  }
  if (!os) throw IoError("write failed: " + path.string());
}

PpmImage read_ppm(const std::filesystem::path& path) {
  auto is = open_in(path);
  std::string magic;
  is >> magic;
  if (magic != "P6") throw FormatError("not a binary PPM: " + path.string());
  const auto field = [&](const char* what) {
    is >> std::ws;
    while (is.peek() == '#') {
      std::string skip;
      std::getline(is, skip);
      is >> std::ws;
    }
    long v = -1;
    if (!(is >> v) || v < 0) throw FormatError(std::string("bad PPM ") + what);
    return v;
  };
  PpmImage img;
  img.width = field("width");
  img.height = field("height");
  if (field("maxval") != 255) throw FormatError("PPM maxval must be 255");
  is.get();
  img.rgb.resize(static_cast<std::size_t>(img.width * img.height * 3));
  if (!is.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()))) {
    throw FormatError("truncated PPM pixel data");
  }
  return img;
}

}  // namespace dmlganr
