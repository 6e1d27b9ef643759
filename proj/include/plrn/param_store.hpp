#pragma once

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "plrn/tensor.hpp"

namespace plrn {

namespace detail {

inline void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline void write_f64(std::ostream& os, double d) {
    uint64_t v;
    std::memcpy(&v, &d, 8);
    write_u64(os, v);
}

inline uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("checkpoint: truncated file");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw IoError("checkpoint: truncated file");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

inline double read_f64(std::istream& is) {
    uint64_t v = read_u64(is);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
}

struct Record {
    std::string name;
    std::vector<int> dims;
    std::vector<double> payload;
};

inline void write_record(std::ostream& os, const std::string& name, const std::vector<int>& dims,
                         const std::vector<double>& payload) {
    write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<uint32_t>(dims.size()));
    for (int d : dims) write_u32(os, static_cast<uint32_t>(d));
    for (double v : payload) write_f64(os, v);
}

inline Record read_record(std::istream& is) {
    Record r;
    const uint32_t name_len = read_u32(is);
    r.name.resize(name_len);
    is.read(r.name.data(), name_len);
    if (!is) throw IoError("checkpoint: truncated record name");
    const uint32_t rank = read_u32(is);
    uint64_t n = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        const uint32_t d = read_u32(is);
        r.dims.push_back(static_cast<int>(d));
        n *= d;
    }
    r.payload.resize(n);
    for (uint64_t i = 0; i < n; ++i) r.payload[i] = read_f64(is);
    return r;
}

}  // namespace detail

/// Named trainable parameters plus per-parameter Adam state. Names are
/// unique; iteration order (std::map) is the serialization order, which makes
/// checkpoints and update sweeps deterministic.
class ParameterStore {
public:
    struct AdamState {
        std::vector<double> m, v;
        int64_t t = 0;
    };

    TensorPtr add(const std::string& name, const TensorPtr& t) {
        if (params_.count(name)) throw ContractError("parameter '" + name + "' already registered");
        t->set_requires_grad();
        params_[name] = t;
        return t;
    }

    TensorPtr get(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
        return it->second;
    }

    bool has(const std::string& name) const { return params_.count(name) > 0; }

    const std::map<std::string, TensorPtr>& params() const { return params_; }

    void zero_grad() {
        for (auto& [name, t] : params_) t->zero_grad();
    }

    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& [name, t] : params_) n += t->size();
        return n;
    }

    /// One Adam update with bias correction over every parameter, then
    /// gradients are zeroed.
    void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
        for (auto& [name, t] : params_) {
            if (!t->requires_grad || t->grad.size() != t->data.size())
                throw TrainingStateError("adam_step: parameter '" + name + "' has no gradient");
            AdamState& st = opt_[name];
            if (st.m.empty()) {
                st.m.assign(t->data.size(), 0.0);
                st.v.assign(t->data.size(), 0.0);
            }
            st.t += 1;
            const double c1 = 1.0 - std::pow(beta1, static_cast<double>(st.t));
            const double c2 = 1.0 - std::pow(beta2, static_cast<double>(st.t));
            for (size_t i = 0; i < t->data.size(); ++i) {
                const double g = t->grad[i];
                st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g;
                st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g * g;
                const double mhat = st.m[i] / c1;
                const double vhat = st.v[i] / c2;
                t->data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
        zero_grad();
    }

    struct Snapshot {
        std::map<std::string, std::vector<double>> params;
        std::map<std::string, AdamState> opt;
    };

    Snapshot snapshot() const {
        Snapshot s;
        for (const auto& [name, t] : params_) s.params[name] = t->data;
        s.opt = opt_;
        return s;
    }

    void restore(const Snapshot& s) {
        for (const auto& [name, data] : s.params) get(name)->data = data;
        opt_ = s.opt;
    }

    // ---- checkpoint format ----
    // magic "PLRN1"; u64 parameter record count; parameter records; u64
    // optimizer record count; optimizer records. Each record: u32 name
    // length, name bytes, u32 rank, u32 dims, little-endian f64 payload.
    // Optimizer records are named m:<param>, v:<param>, t:<param>.

    void save(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw IoError("cannot open '" + path + "' for writing");
        os.write("PLRN1", 5);
        detail::write_u64(os, params_.size());
        for (const auto& [name, t] : params_) detail::write_record(os, name, t->shape, t->data);
        uint64_t n_opt = 0;
        for (const auto& [name, st] : opt_)
            if (!st.m.empty()) n_opt += 3;
        detail::write_u64(os, n_opt);
        for (const auto& [name, st] : opt_) {
            if (st.m.empty()) continue;
            const auto& shape = params_.at(name)->shape;
            detail::write_record(os, "m:" + name, shape, st.m);
            detail::write_record(os, "v:" + name, shape, st.v);
            detail::write_record(os, "t:" + name, {1}, {static_cast<double>(st.t)});
        }
        if (!os) throw IoError("write failed for '" + path + "'");
    }

    /// Loads a checkpoint. With `expect_same_layout` the store must already
    /// contain exactly the same parameter names and shapes (used by predict,
    /// where the model was rebuilt from config); a mismatch names the field.
    void load(const std::string& path, bool expect_same_layout = false) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw IoError("cannot open checkpoint '" + path + "'");
        char magic[5];
        is.read(magic, 5);
        if (!is || std::memcmp(magic, "PLRN1", 5) != 0)
            throw IoError("'" + path + "' is not a PLRN1 checkpoint");
        const uint64_t n_params = detail::read_u64(is);
        std::map<std::string, detail::Record> seen;
        for (uint64_t i = 0; i < n_params; ++i) {
            auto rec = detail::read_record(is);
            seen[rec.name] = std::move(rec);
        }
        if (expect_same_layout) {
            for (const auto& [name, t] : params_) {
                auto it = seen.find(name);
                if (it == seen.end())
                    throw CompatibilityError("checkpoint is missing parameter '" + name + "'");
                if (it->second.dims != t->shape)
                    throw CompatibilityError("parameter '" + name + "': checkpoint shape " +
                                             shape_str(it->second.dims) + " != configured " +
                                             shape_str(t->shape));
            }
            for (const auto& [name, rec] : seen)
                if (!params_.count(name))
                    throw CompatibilityError("checkpoint has unexpected parameter '" + name + "'");
        }
        for (auto& [name, rec] : seen) {
            TensorPtr t;
            if (params_.count(name)) {
                t = params_[name];
                if (rec.dims != t->shape)
                    throw CompatibilityError("parameter '" + name + "': checkpoint shape " +
                                             shape_str(rec.dims) + " != configured " +
                                             shape_str(t->shape));
                t->data = std::move(rec.payload);
            } else {
                t = std::make_shared<Tensor>();
                t->shape = rec.dims;
                t->data = std::move(rec.payload);
                t->set_requires_grad();
                params_[name] = t;
            }
        }
        opt_.clear();
        const uint64_t n_opt = detail::read_u64(is);
        for (uint64_t i = 0; i < n_opt; ++i) {
            auto rec = detail::read_record(is);
            if (rec.name.size() < 3 || rec.name[1] != ':')
                throw IoError("checkpoint: malformed optimizer record '" + rec.name + "'");
            const std::string pname = rec.name.substr(2);
            if (!params_.count(pname))
                throw CompatibilityError("optimizer state for unknown parameter '" + pname + "'");
            AdamState& st = opt_[pname];
            switch (rec.name[0]) {
                case 'm': st.m = std::move(rec.payload); break;
                case 'v': st.v = std::move(rec.payload); break;
                case 't': st.t = static_cast<int64_t>(rec.payload.at(0)); break;
                default: throw IoError("checkpoint: malformed optimizer record '" + rec.name + "'");
            }
        }
    }

private:
    std::map<std::string, TensorPtr> params_;
    std::map<std::string, AdamState> opt_;
};

}  // namespace plrn
