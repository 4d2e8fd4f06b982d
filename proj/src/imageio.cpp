#include "splat/imageio.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

#include "splat/errors.hpp"

namespace splat {

namespace {

std::uint32_t crc32_table_entry(std::uint32_t n) {
    for (int k = 0; k < 8; ++k) n = (n & 1) ? 0xedb88320u ^ (n >> 1) : n >> 1;
    return n;
}

const std::array<std::uint32_t, 256>& crc_table() {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t n = 0; n < 256; ++n) t[n] = crc32_table_entry(n);
        return t;
    }();
    return table;
}

std::uint32_t crc32(const unsigned char* data, std::size_t n,
                    std::uint32_t crc = 0xffffffffu) {
    for (std::size_t i = 0; i < n; ++i)
        crc = crc_table()[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
    return crc;
}

std::uint32_t adler32(const unsigned char* data, std::size_t n) {
    std::uint32_t a = 1, b = 0;
    for (std::size_t i = 0; i < n; ++i) {
        a = (a + data[i]) % 65521u;
        b = (b + a) % 65521u;
    }
    return (b << 16) | a;
}

void put_u32be(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

void append_chunk(std::vector<unsigned char>& out, const char type[4],
                  const std::vector<unsigned char>& data) {
    put_u32be(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const std::uint32_t crc =
        crc32(out.data() + start, out.size() - start) ^ 0xffffffffu;
    put_u32be(out, crc);
}

std::uint32_t get_u32be(const unsigned char* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) |
           (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

constexpr unsigned char kPngSig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};

} // namespace

void write_png(const std::string& path, const ImageBuffer& img) {
    if (img.height <= 0 || img.width <= 0)
        throw invalid_parameter("write_png: empty image");
    // scanlines: filter byte 0, then 8-bit RGB
    const std::size_t row_bytes = static_cast<std::size_t>(img.width) * 3 + 1;
    std::vector<unsigned char> raw(row_bytes * static_cast<std::size_t>(img.height));
    for (int r = 0; r < img.height; ++r) {
        unsigned char* row = raw.data() + row_bytes * static_cast<std::size_t>(r);
        row[0] = 0;
        for (int c = 0; c < img.width; ++c)
            for (int ch = 0; ch < 3; ++ch) {
                double v = img.at(r, c, ch);
                v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
                row[1 + c * 3 + ch] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
    }

    // zlib stream with stored deflate blocks
    std::vector<unsigned char> zdata;
    zdata.push_back(0x78);
    zdata.push_back(0x01);
    std::size_t off = 0;
    while (off < raw.size()) {
        const std::size_t len = std::min<std::size_t>(65535, raw.size() - off);
        const bool final = off + len == raw.size();
        zdata.push_back(final ? 1 : 0);
        zdata.push_back(static_cast<unsigned char>(len & 0xff));
        zdata.push_back(static_cast<unsigned char>(len >> 8));
        zdata.push_back(static_cast<unsigned char>(~len & 0xff));
        zdata.push_back(static_cast<unsigned char>((~len >> 8) & 0xff));
        zdata.insert(zdata.end(), raw.begin() + off, raw.begin() + off + len);
        off += len;
    }
    put_u32be(zdata, adler32(raw.data(), raw.size()));

    std::vector<unsigned char> ihdr;
    put_u32be(ihdr, static_cast<std::uint32_t>(img.width));
    put_u32be(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.push_back(8); // bit depth
    ihdr.push_back(2); // color type: truecolor
    ihdr.push_back(0); // compression
    ihdr.push_back(0); // filter
    ihdr.push_back(0); // interlace

    std::vector<unsigned char> out(kPngSig, kPngSig + 8);
    append_chunk(out, "IHDR", ihdr);
    append_chunk(out, "IDAT", zdata);
    append_chunk(out, "IEND", {});

    std::ofstream f(path, std::ios::binary);
    if (!f) throw data_error("write_png: cannot open " + path);
    f.write(reinterpret_cast<const char*>(out.data()),
            static_cast<std::streamsize>(out.size()));
    if (!f) throw data_error("write_png: write failed: " + path);
}

ImageBuffer read_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw data_error("read_png: cannot open " + path);
    std::vector<unsigned char> buf(std::istreambuf_iterator<char>(f),
                                   std::istreambuf_iterator<char>{});
    if (buf.size() < 8 || std::memcmp(buf.data(), kPngSig, 8) != 0)
        throw data_error("read_png: not a PNG: " + path);

    int width = 0, height = 0;
    std::vector<unsigned char> zdata;
    std::size_t pos = 8;
    while (pos + 8 <= buf.size()) {
        const std::uint32_t len = get_u32be(buf.data() + pos);
        if (pos + 12 + len > buf.size())
            throw data_error("read_png: truncated chunk: " + path);
        const char* type = reinterpret_cast<const char*>(buf.data() + pos + 4);
        const unsigned char* data = buf.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw data_error("read_png: bad IHDR: " + path);
            width = static_cast<int>(get_u32be(data));
            height = static_cast<int>(get_u32be(data + 4));
            if (data[8] != 8 || data[9] != 2 || data[10] != 0 || data[11] != 0 ||
                data[12] != 0)
                throw data_error("read_png: unsupported PNG variant: " + path);
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            zdata.insert(zdata.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (width <= 0 || height <= 0) throw data_error("read_png: missing IHDR: " + path);

    // inflate: stored blocks only
    if (zdata.size() < 6) throw data_error("read_png: truncated zlib stream: " + path);
    std::vector<unsigned char> raw;
    std::size_t zp = 2; // skip zlib header
    while (true) {
        if (zp + 5 > zdata.size())
            throw data_error("read_png: truncated deflate block: " + path);
        const unsigned char header = zdata[zp];
        if ((header & 0x06) != 0)
            throw data_error("read_png: compressed PNGs are not supported: " + path);
        const std::size_t len = zdata[zp + 1] | (zdata[zp + 2] << 8);
        zp += 5;
        if (zp + len > zdata.size())
            throw data_error("read_png: truncated stored block: " + path);
        raw.insert(raw.end(), zdata.begin() + zp, zdata.begin() + zp + len);
        zp += len;
        if (header & 1) break;
    }
    const std::size_t row_bytes = static_cast<std::size_t>(width) * 3 + 1;
    if (raw.size() != row_bytes * static_cast<std::size_t>(height))
        throw data_error("read_png: pixel payload size mismatch: " + path);

    ImageBuffer img(height, width);
    for (int r = 0; r < height; ++r) {
        const unsigned char* row = raw.data() + row_bytes * static_cast<std::size_t>(r);
        if (row[0] != 0)
            throw data_error("read_png: unsupported scanline filter: " + path);
        for (int c = 0; c < width; ++c)
            for (int ch = 0; ch < 3; ++ch)
                img.at(r, c, ch) = row[1 + c * 3 + ch] / 255.0;
    }
    return img;
}

void write_depth(const std::string& path, const std::vector<double>& values,
                 int height, int width) {
    if (values.size() != static_cast<std::size_t>(height) * width)
        throw shape_error("write_depth: value count != height*width");
    std::vector<unsigned char> out;
    out.reserve(16 + values.size() * 4);
    out.insert(out.end(), {'D', 'P', 'T', 'H'});
    auto put_u32le = [&](std::uint32_t v) {
        out.push_back(static_cast<unsigned char>(v & 0xff));
        out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
        out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
        out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
    };
    put_u32le(static_cast<std::uint32_t>(height));
    put_u32le(static_cast<std::uint32_t>(width));
    put_u32le(0);
    for (double v : values) {
        const float fv = static_cast<float>(v);
        std::uint32_t u;
        std::memcpy(&u, &fv, 4);
        put_u32le(u);
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw data_error("write_depth: cannot open " + path);
    f.write(reinterpret_cast<const char*>(out.data()),
            static_cast<std::streamsize>(out.size()));
    if (!f) throw data_error("write_depth: write failed: " + path);
}

std::vector<double> read_depth(const std::string& path, int* height, int* width) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw data_error("read_depth: cannot open " + path);
    std::vector<unsigned char> buf(std::istreambuf_iterator<char>(f),
                                   std::istreambuf_iterator<char>{});
    if (buf.size() < 16 || std::memcmp(buf.data(), "DPTH", 4) != 0)
        throw data_error("read_depth: bad header: " + path);
    auto get_u32le = [&](std::size_t off) {
        return static_cast<std::uint32_t>(buf[off]) |
               (static_cast<std::uint32_t>(buf[off + 1]) << 8) |
               (static_cast<std::uint32_t>(buf[off + 2]) << 16) |
               (static_cast<std::uint32_t>(buf[off + 3]) << 24);
    };
    const std::uint32_t h = get_u32le(4), w = get_u32le(8);
    const std::size_t n = static_cast<std::size_t>(h) * w;
    if (buf.size() != 16 + n * 4)
        throw data_error("read_depth: payload size mismatch: " + path);
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t u = get_u32le(16 + i * 4);
        float fv;
        std::memcpy(&fv, &u, 4);
        values[i] = static_cast<double>(fv);
    }
    if (height) *height = static_cast<int>(h);
    if (width) *width = static_cast<int>(w);
    return values;
}

} // namespace splat
