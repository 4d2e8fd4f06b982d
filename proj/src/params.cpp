#include "splat/nn/params.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "splat/errors.hpp"

namespace splat::nn {

namespace {

std::vector<unsigned char> f32_bytes(const Tensor& t) {
    std::vector<unsigned char> out(static_cast<std::size_t>(t.size()) * 4);
    for (std::int64_t i = 0; i < t.size(); ++i) {
        const float f = static_cast<float>(t.data[static_cast<std::size_t>(i)]);
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        const std::size_t o = static_cast<std::size_t>(i) * 4;
        out[o + 0] = static_cast<unsigned char>(u & 0xff);
        out[o + 1] = static_cast<unsigned char>((u >> 8) & 0xff);
        out[o + 2] = static_cast<unsigned char>((u >> 16) & 0xff);
        out[o + 3] = static_cast<unsigned char>((u >> 24) & 0xff);
    }
    return out;
}

double f32_from_bytes(const unsigned char* p) {
    std::uint32_t u = static_cast<std::uint32_t>(p[0]) |
                      (static_cast<std::uint32_t>(p[1]) << 8) |
                      (static_cast<std::uint32_t>(p[2]) << 16) |
                      (static_cast<std::uint32_t>(p[3]) << 24);
    float f;
    std::memcpy(&f, &u, 4);
    return static_cast<double>(f);
}

} // namespace

std::size_t ParamStore::add(const std::string& name, Tensor value, bool trainable) {
    if (has(name)) throw invalid_parameter("ParamStore: duplicate name " + name);
    entries_.push_back(Entry{name, std::move(value), trainable});
    return entries_.size() - 1;
}

bool ParamStore::has(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return true;
    return false;
}

std::size_t ParamStore::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].name == name) return i;
    throw invalid_parameter("ParamStore: unknown name " + name);
}

void ParamStore::set_trainable(const std::string& name, bool trainable) {
    entries_[index_of(name)].trainable = trainable;
}

void ParamStore::freeze_all() {
    for (auto& e : entries_) e.trainable = false;
}

std::size_t ParamStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
    return n;
}

std::uint64_t ParamStore::frozen_checksum() const {
    std::uint64_t h = kFnvOffset;
    for (const auto& e : entries_) {
        if (e.trainable) continue;
        h = fnv1a(e.name.data(), e.name.size(), h);
        const std::int64_t shape[2] = {e.value.rows, e.value.cols};
        h = fnv1a(shape, sizeof(shape), h);
        const auto bytes = f32_bytes(e.value);
        h = fnv1a(bytes.data(), bytes.size(), h);
    }
    return h;
}

void ParamStore::save(const std::string& base_path) const {
    std::ofstream bin(base_path + ".bin", std::ios::binary);
    if (!bin) throw data_error("cannot open for write: " + base_path + ".bin");
    nlohmann::json index;
    index["format"] = "splat-ckpt-v1";
    nlohmann::json tensors = nlohmann::json::object();
    std::int64_t offset = 0;
    for (const auto& e : entries_) {
        const auto bytes = f32_bytes(e.value);
        bin.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        tensors[e.name] = {{"shape", {e.value.rows, e.value.cols}},
                           {"offset", offset},
                           {"trainable", e.trainable}};
        offset += e.value.size();
    }
    index["tensors"] = tensors;
    bin.close();
    if (!bin) throw data_error("write failed: " + base_path + ".bin");
    std::ofstream js(base_path + ".json", std::ios::binary);
    if (!js) throw data_error("cannot open for write: " + base_path + ".json");
    js << index.dump(2) << "\n";
}

namespace {

struct IndexEntry {
    std::string name;
    std::int64_t rows = 0, cols = 0, offset = 0;
    bool trainable = true;
};

std::vector<IndexEntry> read_index(const std::string& base_path) {
    std::ifstream js(base_path + ".json");
    if (!js) throw data_error("cannot open checkpoint index: " + base_path + ".json");
    nlohmann::json index;
    try {
        js >> index;
    } catch (const std::exception& e) {
        throw data_error(std::string("bad checkpoint index: ") + e.what());
    }
    if (!index.contains("tensors") || !index["tensors"].is_object())
        throw data_error("checkpoint index missing tensors object");
    std::vector<IndexEntry> out;
    for (const auto& [name, meta] : index["tensors"].items()) {
        IndexEntry e;
        e.name = name;
        const auto& shape = meta.at("shape");
        if (!shape.is_array() || shape.size() != 2)
            throw data_error("checkpoint shape must be [rows, cols]: " + name);
        e.rows = shape[0].get<std::int64_t>();
        e.cols = shape[1].get<std::int64_t>();
        e.offset = meta.at("offset").get<std::int64_t>();
        e.trainable = meta.at("trainable").get<bool>();
        out.push_back(std::move(e));
    }
    // restore original save order
    std::sort(out.begin(), out.end(),
              [](const IndexEntry& a, const IndexEntry& b) { return a.offset < b.offset; });
    return out;
}

std::vector<unsigned char> read_blob(const std::string& base_path) {
    std::ifstream bin(base_path + ".bin", std::ios::binary);
    if (!bin) throw data_error("cannot open checkpoint blob: " + base_path + ".bin");
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(bin),
                                      std::istreambuf_iterator<char>());
}

Tensor read_tensor(const std::vector<unsigned char>& blob, const IndexEntry& e) {
    if (e.rows < 0 || e.cols < 0 || e.offset < 0)
        throw data_error("checkpoint entry has negative geometry: " + e.name);
    Tensor t(e.rows, e.cols);
    const std::size_t need = (static_cast<std::size_t>(e.offset) +
                              static_cast<std::size_t>(t.size())) * 4;
    if (blob.size() < need)
        throw data_error("checkpoint blob truncated at tensor " + e.name);
    const unsigned char* p = blob.data() + static_cast<std::size_t>(e.offset) * 4;
    for (std::int64_t i = 0; i < t.size(); ++i)
        t.data[static_cast<std::size_t>(i)] = f32_from_bytes(p + i * 4);
    return t;
}

} // namespace

ParamStore ParamStore::load(const std::string& base_path) {
    const auto index = read_index(base_path);
    const auto blob = read_blob(base_path);
    ParamStore store;
    for (const auto& e : index) store.add(e.name, read_tensor(blob, e), e.trainable);
    return store;
}

void ParamStore::load_values(const std::string& base_path) {
    const auto index = read_index(base_path);
    const auto blob = read_blob(base_path);
    for (const auto& e : index) {
        if (!has(e.name))
            throw data_error("checkpoint tensor not present in model: " + e.name);
        Entry& dst = entries_[index_of(e.name)];
        if (dst.value.rows != e.rows || dst.value.cols != e.cols)
            throw data_error("checkpoint shape mismatch for " + e.name);
        dst.value = read_tensor(blob, e);
    }
    if (index.size() != entries_.size())
        throw data_error("checkpoint does not cover every model tensor");
}

std::size_t param_trunc_normal(ParamStore& store, const std::string& name,
                               std::int64_t rows, std::int64_t cols, RngStream& rng,
                               double stddev, bool trainable) {
    return store.add(name, Tensor::trunc_normal(rows, cols, stddev, rng), trainable);
}

std::size_t param_zeros(ParamStore& store, const std::string& name, std::int64_t rows,
                        std::int64_t cols, bool trainable) {
    return store.add(name, Tensor::zeros(rows, cols), trainable);
}

std::size_t param_ones(ParamStore& store, const std::string& name, std::int64_t rows,
                       std::int64_t cols, bool trainable) {
    Tensor t(rows, cols, 1.0);
    return store.add(name, std::move(t), trainable);
}

std::vector<Var> bind_params(Tape& tape, const ParamStore& store) {
    std::vector<Var> vars;
    vars.reserve(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& e = store.entry(i);
        vars.push_back(tape.input(e.value, e.trainable));
    }
    return vars;
}

std::vector<Tensor> harvest_grads(const Tape& tape, const ParamStore& store,
                                  const std::vector<Var>& vars) {
    if (vars.size() != store.size())
        throw contract_violation("harvest_grads: var list does not match store");
    std::vector<Tensor> grads;
    grads.reserve(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) {
        if (store.entry(i).trainable)
            grads.push_back(tape.grad(vars[i]));
        else
            grads.emplace_back(0, 0);
    }
    return grads;
}

} // namespace splat::nn
