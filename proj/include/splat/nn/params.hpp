#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "splat/nn/tape.hpp"
#include "splat/util.hpp"

namespace splat::nn {

// Named parameter set with stable insertion order. Checkpoints are a flat
// little-endian float32 blob plus a JSON index; offsets count float elements.
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor value;
        bool trainable = true;
    };

    std::size_t add(const std::string& name, Tensor value, bool trainable = true);
    bool has(const std::string& name) const;
    std::size_t index_of(const std::string& name) const; // throws if absent

    Tensor& value(const std::string& name) { return entries_[index_of(name)].value; }
    const Tensor& value(const std::string& name) const {
        return entries_[index_of(name)].value;
    }

    Entry& entry(std::size_t i) { return entries_.at(i); }
    const Entry& entry(std::size_t i) const { return entries_.at(i); }
    std::size_t size() const { return entries_.size(); }

    void set_trainable(const std::string& name, bool trainable);
    void freeze_all();
    std::size_t parameter_count() const;

    // FNV-1a over name, shape and float32 payload of every frozen entry.
    std::uint64_t frozen_checksum() const;

    // base path gets ".bin" / ".json" suffixes appended
    void save(const std::string& base_path) const;
    static ParamStore load(const std::string& base_path);
    // copy values by name into existing entries; shapes must match,
    // trainable flags are left untouched
    void load_values(const std::string& base_path);

private:
    std::vector<Entry> entries_;
};

// convenience initializers
std::size_t param_trunc_normal(ParamStore& store, const std::string& name,
                               std::int64_t rows, std::int64_t cols, RngStream& rng,
                               double stddev = 0.02, bool trainable = true);
std::size_t param_zeros(ParamStore& store, const std::string& name, std::int64_t rows,
                        std::int64_t cols, bool trainable = true);
std::size_t param_ones(ParamStore& store, const std::string& name, std::int64_t rows,
                       std::int64_t cols, bool trainable = true);

// Registers every entry of the store on a tape (requires_grad follows the
// trainable flag). vars[i] corresponds to entries in store order.
std::vector<Var> bind_params(Tape& tape, const ParamStore& store);

// Gradients for trainable entries after tape.backward; zero tensors are
// returned for trainable params the loss never touched. Frozen entries get
// an empty (0x0) tensor.
std::vector<Tensor> harvest_grads(const Tape& tape, const ParamStore& store,
                                  const std::vector<Var>& vars);

} // namespace splat::nn
