#pragma once

#include <cstring>
#include <fstream>
#include <string>

#include "deepsofa/cohort.hpp"
#include "deepsofa/model.hpp"

namespace deepsofa {

inline constexpr char kCheckpointMagic[8] = {'D', 'S', 'O', 'F', 'A', 'C', 'K', '1'};

// Versioned binary checkpoint (native little-endian). Layout, in order:
//   magic[8], version u32,
//   input_dim u32, hidden_dim u32, dropout f64, l2 f64, lr f64,
//   batch u32, patience u32, max_epochs u32,
//   attention_mode u32, self_query u32, scale_logits u32, seed u64,
//   n_columns u32, column indices u32...,
//   n_norm u32, feat_mean f64..., feat_std f64...,
//   then per parameter matrix in for_each order: rows u32, cols u32,
//   row-major f64 data (empty matrices written as 0x0).
// The stored normalization makes cross-cohort evaluation use
// development-cohort statistics.
inline void save_checkpoint(const ModelParams& params, const ModelConfig& cfg,
                            const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::write_u32(out, 1);  // version
    detail::write_u32(out, static_cast<uint32_t>(cfg.input_dim));
    detail::write_u32(out, static_cast<uint32_t>(cfg.hidden_dim));
    detail::write_f64(out, cfg.dropout_p);
    detail::write_f64(out, cfg.l2_lambda);
    detail::write_f64(out, cfg.learning_rate);
    detail::write_u32(out, static_cast<uint32_t>(cfg.batch_size));
    detail::write_u32(out, static_cast<uint32_t>(cfg.patience_epochs));
    detail::write_u32(out, static_cast<uint32_t>(cfg.max_epochs));
    detail::write_u32(out, static_cast<uint32_t>(cfg.attention));
    detail::write_u32(out, static_cast<uint32_t>(cfg.self_query));
    detail::write_u32(out, cfg.scale_logits ? 1 : 0);
    detail::write_u64(out, cfg.seed);
    auto columns = cfg.resolved_columns();
    detail::write_u32(out, static_cast<uint32_t>(columns.size()));
    for (int c : columns) detail::write_u32(out, static_cast<uint32_t>(c));
    detail::write_u32(out, static_cast<uint32_t>(cfg.feat_mean.size()));
    for (Eigen::Index i = 0; i < cfg.feat_mean.size(); ++i) detail::write_f64(out, cfg.feat_mean[i]);
    for (Eigen::Index i = 0; i < cfg.feat_std.size(); ++i) detail::write_f64(out, cfg.feat_std[i]);

    const_cast<ModelParams&>(params).for_each([&out](const char*, Mat& m) {
        detail::write_u32(out, static_cast<uint32_t>(m.rows()));
        detail::write_u32(out, static_cast<uint32_t>(m.cols()));
        out.write(reinterpret_cast<const char*>(m.data()),
                  static_cast<std::streamsize>(sizeof(double) * m.size()));
    });
    if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

inline std::pair<ModelParams, ModelConfig> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    uint32_t version = detail::read_u32(in);
    if (version != 1) throw std::runtime_error("unsupported checkpoint version in " + path);
    ModelConfig cfg;
    cfg.input_dim = static_cast<int>(detail::read_u32(in));
    cfg.hidden_dim = static_cast<int>(detail::read_u32(in));
    cfg.dropout_p = detail::read_f64(in);
    cfg.l2_lambda = detail::read_f64(in);
    cfg.learning_rate = detail::read_f64(in);
    cfg.batch_size = static_cast<int>(detail::read_u32(in));
    cfg.patience_epochs = static_cast<int>(detail::read_u32(in));
    cfg.max_epochs = static_cast<int>(detail::read_u32(in));
    cfg.attention = static_cast<AttentionMode>(detail::read_u32(in));
    cfg.self_query = static_cast<SelfQueryMode>(detail::read_u32(in));
    cfg.scale_logits = detail::read_u32(in) != 0;
    cfg.seed = detail::read_u64(in);
    uint32_t n_cols = detail::read_u32(in);
    cfg.feature_columns.resize(n_cols);
    for (auto& c : cfg.feature_columns) c = static_cast<int>(detail::read_u32(in));
    uint32_t n_norm = detail::read_u32(in);
    cfg.feat_mean.resize(n_norm);
    cfg.feat_std.resize(n_norm);
    for (uint32_t i = 0; i < n_norm; ++i) cfg.feat_mean[i] = detail::read_f64(in);
    for (uint32_t i = 0; i < n_norm; ++i) cfg.feat_std[i] = detail::read_f64(in);

    ModelParams params;
    params.for_each([&in, &path](const char*, Mat& m) {
        uint32_t rows = detail::read_u32(in);
        uint32_t cols = detail::read_u32(in);
        m.resize(rows, cols);
        in.read(reinterpret_cast<char*>(m.data()),
                static_cast<std::streamsize>(sizeof(double) * m.size()));
        if (!in) throw std::runtime_error("truncated checkpoint: " + path);
    });
    return {std::move(params), std::move(cfg)};
}

// Lower-triangular attention matrix as CSV, one row per hour.
inline void write_attention_csv(const Mat& attention, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write attention csv: " + path);
    out.precision(12);
    for (Eigen::Index r = 0; r < attention.rows(); ++r) {
        for (Eigen::Index c = 0; c < attention.cols(); ++c) {
            if (c) out << ",";
            out << attention(r, c);
        }
        out << "\n";
    }
}

// ASCII PGM heatmap of the attention matrix; darker pixels mark heavier
// weights, scaled against the matrix maximum.
inline void write_attention_pgm(const Mat& attention, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write attention pgm: " + path);
    double max_w = attention.maxCoeff();
    if (max_w <= 0) max_w = 1.0;
    out << "P2\n" << attention.cols() << " " << attention.rows() << "\n255\n";
    for (Eigen::Index r = 0; r < attention.rows(); ++r) {
        for (Eigen::Index c = 0; c < attention.cols(); ++c) {
            int level = 255 - static_cast<int>(std::lround(255.0 * attention(r, c) / max_w));
            if (c) out << " ";
            out << level;
        }
        out << "\n";
    }
}

}  // namespace deepsofa
