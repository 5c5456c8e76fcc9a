#include "needlenav/image.hpp"

#include "needlenav/error.hpp"

#include <cctype>
#include <fstream>
#include <istream>
#include <string>

namespace needlenav {

GrayImage::GrayImage(int w, int h, std::uint8_t fill) : width(w), height(h) {
  if (w < 0 || h < 0) throw Error(ErrorCode::InvalidArgument, "image: negative dimensions");
  pixels.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill);
}

bool GrayImage::valid() const {
  return width >= 0 && height >= 0 &&
         pixels.size() == static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
}

void write_pgm(const GrayImage& img, const std::filesystem::path& path) {
  if (!img.valid()) throw Error(ErrorCode::InvalidArgument, "write_pgm: buffer size does not match dimensions");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "write_pgm: cannot open " + path.string());
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw Error(ErrorCode::Io, "write_pgm: write failed for " + path.string());
}

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

int parse_dim(const std::string& tok) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size()) throw Error(ErrorCode::Parse, "read_pgm: bad header field '" + tok + "'");
    return v;
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::Parse, "read_pgm: bad header field '" + tok + "'");
  }
}

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "read_pgm: cannot open " + path.string());
  if (next_token(in) != "P5") throw Error(ErrorCode::Parse, "read_pgm: only binary P5 is supported");
  const int w = parse_dim(next_token(in));
  const int h = parse_dim(next_token(in));
  const int maxval = parse_dim(next_token(in));
  if (w <= 0 || h <= 0) throw Error(ErrorCode::Parse, "read_pgm: non-positive dimensions");
  if (maxval != 255) throw Error(ErrorCode::Parse, "read_pgm: only maxval 255 is supported");
  GrayImage img(w, h);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw Error(ErrorCode::Parse, "read_pgm: truncated pixel data");
  return img;
}

}  // namespace needlenav
