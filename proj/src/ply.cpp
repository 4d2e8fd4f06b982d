#include "splat/ply.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "splat/errors.hpp"

namespace splat {

namespace {

const char* const kProps[14] = {"x",     "y",     "z",     "scale_0", "scale_1",
                                "scale_2", "rot_0", "rot_1", "rot_2",   "rot_3",
                                "opacity", "red",   "green", "blue"};

void push_f32(std::vector<unsigned char>& out, double v) {
    const float f = static_cast<float>(v);
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    out.push_back(static_cast<unsigned char>(u & 0xff));
    out.push_back(static_cast<unsigned char>((u >> 8) & 0xff));
    out.push_back(static_cast<unsigned char>((u >> 16) & 0xff));
    out.push_back(static_cast<unsigned char>((u >> 24) & 0xff));
}

double pop_f32(const unsigned char* p) {
    std::uint32_t u = static_cast<std::uint32_t>(p[0]) |
                      (static_cast<std::uint32_t>(p[1]) << 8) |
                      (static_cast<std::uint32_t>(p[2]) << 16) |
                      (static_cast<std::uint32_t>(p[3]) << 24);
    float f;
    std::memcpy(&f, &u, 4);
    return static_cast<double>(f);
}

} // namespace

void export_ply(const GaussianScene& scene, const std::string& path) {
    std::ostringstream header;
    header << "ply\nformat binary_little_endian 1.0\n";
    char radius_buf[64];
    std::snprintf(radius_buf, sizeof(radius_buf), "%.17g", scene.bound_radius);
    header << "comment bound_radius " << radius_buf << "\n";
    header << "element vertex " << scene.size() << "\n";
    for (const char* p : kProps) header << "property float " << p << "\n";
    header << "end_header\n";

    std::vector<unsigned char> body;
    body.reserve(scene.size() * 14 * 4);
    for (const auto& g : scene.gaussians) {
        for (int k = 0; k < 3; ++k) push_f32(body, g.mean[k]);
        for (int k = 0; k < 3; ++k) push_f32(body, g.log_scale[k]);
        for (int k = 0; k < 4; ++k) push_f32(body, g.rotation[k]);
        push_f32(body, g.opacity_logit);
        for (int k = 0; k < 3; ++k) push_f32(body, g.color[k]);
    }

    std::ofstream f(path, std::ios::binary);
    if (!f) throw data_error("export_ply: cannot open " + path);
    const std::string h = header.str();
    f.write(h.data(), static_cast<std::streamsize>(h.size()));
    f.write(reinterpret_cast<const char*>(body.data()),
            static_cast<std::streamsize>(body.size()));
    if (!f) throw data_error("export_ply: write failed: " + path);
}

GaussianScene import_ply(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw data_error("import_ply: cannot open " + path);
    std::vector<unsigned char> buf(std::istreambuf_iterator<char>(f),
                                   std::istreambuf_iterator<char>{});

    // header is ASCII lines up to "end_header\n"
    const std::string marker = "end_header\n";
    const std::string head(buf.begin(),
                           buf.begin() + static_cast<std::ptrdiff_t>(std::min(
                                             buf.size(), std::size_t(4096))));
    const std::size_t end = head.find(marker);
    if (end == std::string::npos)
        throw data_error("import_ply: missing end_header: " + path);
    std::istringstream hs(head.substr(0, end));

    std::string line;
    std::size_t vertex_count = 0;
    std::size_t prop_seen = 0;
    double bound_radius = 1.0;
    bool magic_ok = false, format_ok = false;
    while (std::getline(hs, line)) {
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (line == "ply") {
            magic_ok = true;
        } else if (tok == "format") {
            std::string fmt, ver;
            ls >> fmt >> ver;
            if (fmt != "binary_little_endian" || ver != "1.0")
                throw data_error("import_ply: unsupported format: " + path);
            format_ok = true;
        } else if (tok == "comment") {
            std::string key;
            ls >> key;
            if (key == "bound_radius") ls >> bound_radius;
        } else if (tok == "element") {
            std::string kind;
            ls >> kind >> vertex_count;
            if (kind != "vertex")
                throw data_error("import_ply: unexpected element: " + path);
        } else if (tok == "property") {
            std::string type, name;
            ls >> type >> name;
            if (prop_seen >= 14 || type != "float" || name != kProps[prop_seen])
                throw data_error("import_ply: property mismatch at " + name);
            ++prop_seen;
        }
    }
    if (!magic_ok || !format_ok)
        throw data_error("import_ply: malformed header: " + path);
    if (prop_seen != 14)
        throw data_error("import_ply: expected 14 float properties: " + path);

    const std::size_t body_off = end + marker.size();
    if (buf.size() - body_off != vertex_count * 14 * 4)
        throw data_error("import_ply: body size mismatch: " + path);

    GaussianScene scene;
    scene.bound_radius = bound_radius;
    scene.gaussians.resize(vertex_count);
    const unsigned char* p = buf.data() + body_off;
    for (auto& g : scene.gaussians) {
        for (int k = 0; k < 3; ++k, p += 4) g.mean[k] = pop_f32(p);
        for (int k = 0; k < 3; ++k, p += 4) g.log_scale[k] = pop_f32(p);
        for (int k = 0; k < 4; ++k, p += 4) g.rotation[k] = pop_f32(p);
        g.opacity_logit = pop_f32(p);
        p += 4;
        for (int k = 0; k < 3; ++k, p += 4) g.color[k] = pop_f32(p);
    }
    return scene;
}

} // namespace splat
