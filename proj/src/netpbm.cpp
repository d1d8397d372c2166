#include "gca/netpbm.hpp"

#include <cstdio>
#include <fstream>

#include "gca/tensor.hpp"

namespace gca {

namespace {

struct Cursor {
  const std::vector<char>& buf;
  std::size_t pos = 0;
  const std::string& path;

  bool eof() const { return pos >= buf.size(); }
  char peek() const { return buf[pos]; }

  [[noreturn]] void die(const std::string& what) const {
    fail("load_pnm: ", path, ": ", what, " at byte ", pos);
  }

  // Netpbm headers allow '#' comments that run to end of line.
  void skip_space_and_comments() {
    while (!eof()) {
      char ch = peek();
      if (ch == '#') {
        while (!eof() && peek() != '\n') ++pos;
      } else if (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n') {
        ++pos;
      } else {
        return;
      }
    }
  }

  int read_int(const char* name) {
    skip_space_and_comments();
    if (eof()) die(std::string("unexpected end of header while reading ") + name);
    if (peek() < '0' || peek() > '9') die(std::string("expected digit for ") + name);
    long v = 0;
    while (!eof() && peek() >= '0' && peek() <= '9') {
      v = v * 10 + (peek() - '0');
      if (v > 1 << 20) die(std::string(name) + " out of range");
      ++pos;
    }
    return static_cast<int>(v);
  }
};

}  // namespace

PnmImage load_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("load_pnm: cannot open ", path);
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  Cursor cur{buf, 0, path};
  if (buf.size() < 2) cur.die("file too short for magic");
  std::string magic(buf.begin(), buf.begin() + 2);
  cur.pos = 2;
  PnmImage img;
  if (magic == "P5") {
    img.channels = 1;
  } else if (magic == "P6") {
    img.channels = 3;
  } else {
    fail("load_pnm: ", path, ": unsupported magic \"", magic, "\" (want P5 or P6)");
  }

  img.width = cur.read_int("width");
  img.height = cur.read_int("height");
  int maxval = cur.read_int("maxval");
  if (maxval != 255)
    fail("load_pnm: ", path, ": maxval ", maxval, " unsupported, only 255 (8-bit) is handled");
  if (img.width <= 0 || img.height <= 0)
    fail("load_pnm: ", path, ": bad dimensions ", img.width, "x", img.height);

  // Exactly one whitespace byte separates the header from the raster.
  if (cur.eof()) cur.die("missing raster separator");
  char sep = cur.peek();
  if (sep != ' ' && sep != '\t' && sep != '\r' && sep != '\n')
    cur.die("expected single whitespace before raster");
  ++cur.pos;

  std::size_t want = std::size_t(img.width) * img.height * img.channels;
  std::size_t have = buf.size() - cur.pos;
  if (have < want)
    fail("load_pnm: ", path, ": raster truncated, expected ", want, " bytes but found ", have,
         " (offset ", cur.pos, ")");
  img.pixels.assign(buf.begin() + cur.pos, buf.begin() + cur.pos + want);
  return img;
}

void save_pnm(const std::string& path, const PnmImage& img) {
  if (img.channels != 1 && img.channels != 3)
    fail("save_pnm: ", path, ": channels must be 1 or 3, got ", img.channels);
  std::size_t want = std::size_t(img.width) * img.height * img.channels;
  if (img.width <= 0 || img.height <= 0 || img.pixels.size() != want)
    fail("save_pnm: ", path, ": pixel buffer has ", img.pixels.size(), " bytes, expected ", want);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("save_pnm: cannot open ", path, " for writing");
  char header[64];
  int n = std::snprintf(header, sizeof(header), "%s\n%d %d\n255\n",
                        img.channels == 1 ? "P5" : "P6", img.width, img.height);
  out.write(header, n);
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) fail("save_pnm: write failed for ", path);
}

}  // namespace gca
