#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mminforec/config.hpp"
#include "mminforec/dropout.hpp"
#include "mminforec/params.hpp"
#include "mminforec/tape.hpp"

namespace mminforec {

// Additive attention mask value for disallowed positions. Finite so every
// intermediate stays finite; far enough below any live logit that the
// stable softmax underflows it to exactly 0.
inline constexpr double kAttnMask = -1e30;

struct BoundBlock {
    ValueRef ln1_g, ln1_b;
    ValueRef wq, bq, wk, bk, wv, bv, wo, bo;
    ValueRef ln2_g, ln2_b;
    ValueRef ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

// Parameter leaves for one tape. Bind once, reuse across every forward call
// recorded on that tape so gradients accumulate per parameter.
struct BoundParams {
    const ModelParams* params = nullptr;
    ValueRef emb_items, emb_attrs, pos_table;
    ValueRef memory, mem_w1, mem_b1, mem_w2, mem_b2;
    std::vector<BoundBlock> enc_blocks, ta_blocks;
    ValueRef gru_wz, gru_uz, gru_bz, gru_wr, gru_ur, gru_br, gru_wh, gru_uh, gru_bh;
};

inline BoundParams bind_params(Tape& tape, ModelParams& p) {
    BoundParams b;
    b.params = &p;
    b.emb_items = tape.param(p.emb_items);
    b.emb_attrs = tape.param(p.emb_attrs);
    auto bind_block = [&](BlockParams& blk) {
        BoundBlock bb;
        bb.ln1_g = tape.param(blk.ln1_g);
        bb.ln1_b = tape.param(blk.ln1_b);
        bb.wq = tape.param(blk.wq);
        bb.bq = tape.param(blk.bq);
        bb.wk = tape.param(blk.wk);
        bb.bk = tape.param(blk.bk);
        bb.wv = tape.param(blk.wv);
        bb.bv = tape.param(blk.bv);
        bb.wo = tape.param(blk.wo);
        bb.bo = tape.param(blk.bo);
        bb.ln2_g = tape.param(blk.ln2_g);
        bb.ln2_b = tape.param(blk.ln2_b);
        bb.ffn_w1 = tape.param(blk.ffn_w1);
        bb.ffn_b1 = tape.param(blk.ffn_b1);
        bb.ffn_w2 = tape.param(blk.ffn_w2);
        bb.ffn_b2 = tape.param(blk.ffn_b2);
        return bb;
    };
    for (auto& blk : p.enc_blocks) b.enc_blocks.push_back(bind_block(blk));
    for (auto& blk : p.ta_blocks) b.ta_blocks.push_back(bind_block(blk));
    b.pos_table = tape.param(p.pos_table);
    b.memory = tape.param(p.memory);
    b.mem_w1 = tape.param(p.mem_w1);
    b.mem_b1 = tape.param(p.mem_b1);
    b.mem_w2 = tape.param(p.mem_w2);
    b.mem_b2 = tape.param(p.mem_b2);
    b.gru_wz = tape.param(p.gru.wz);
    b.gru_uz = tape.param(p.gru.uz);
    b.gru_bz = tape.param(p.gru.bz);
    b.gru_wr = tape.param(p.gru.wr);
    b.gru_ur = tape.param(p.gru.ur);
    b.gru_br = tape.param(p.gru.br);
    b.gru_wh = tape.param(p.gru.wh);
    b.gru_uh = tape.param(p.gru.uh);
    b.gru_bh = tape.param(p.gru.bh);
    return b;
}

namespace detail {

inline ValueRef linear(Tape& tape, ValueRef x, ValueRef w, ValueRef bias) {
    return tape.add_rowvec(tape.matmul(x, w), bias);
}

// Pre-norm transformer block. attn_mask, when present, is an n x n additive
// mask (0 allowed / kAttnMask blocked). Dropout sites: attention output and
// FFN output, one derived mask seed each.
inline ValueRef transformer_block(Tape& tape, const BoundBlock& blk, const ModelConfig& cfg,
                                  ValueRef x, const Tensor* attn_mask,
                                  std::optional<uint64_t> mask_seed, int site_base) {
    const int d = tape.val(x).cols;
    const int dh = d / cfg.heads;

    ValueRef u = tape.layer_norm_rows(x, blk.ln1_g, blk.ln1_b);
    ValueRef q = linear(tape, u, blk.wq, blk.bq);
    ValueRef k = linear(tape, u, blk.wk, blk.bk);
    ValueRef v = linear(tape, u, blk.wv, blk.bv);

    ValueRef mask_ref;
    if (attn_mask != nullptr) mask_ref = tape.constant(*attn_mask);

    std::vector<ValueRef> head_outs;
    head_outs.reserve(static_cast<size_t>(cfg.heads));
    for (int h = 0; h < cfg.heads; ++h) {
        ValueRef qh = cfg.heads == 1 ? q : tape.slice_cols(q, h * dh, dh);
        ValueRef kh = cfg.heads == 1 ? k : tape.slice_cols(k, h * dh, dh);
        ValueRef vh = cfg.heads == 1 ? v : tape.slice_cols(v, h * dh, dh);
        ValueRef scores = tape.scale(tape.matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
        if (mask_ref.valid()) scores = tape.add(scores, mask_ref);
        ValueRef probs = tape.softmax_rows(scores);
        head_outs.push_back(tape.matmul(probs, vh));
    }
    ValueRef attn = cfg.heads == 1 ? head_outs[0] : tape.concat_cols(head_outs);
    attn = linear(tape, attn, blk.wo, blk.bo);
    if (mask_seed)
        attn = tape.dropout(attn, DropoutMask(derive_seed(*mask_seed, static_cast<uint64_t>(site_base)),
                                              cfg.dropout_rate));
    ValueRef x1 = tape.add(x, attn);

    ValueRef u2 = tape.layer_norm_rows(x1, blk.ln2_g, blk.ln2_b);
    ValueRef f = linear(tape, tape.gelu(linear(tape, u2, blk.ffn_w1, blk.ffn_b1)), blk.ffn_w2, blk.ffn_b2);
    if (mask_seed)
        f = tape.dropout(f, DropoutMask(derive_seed(*mask_seed, static_cast<uint64_t>(site_base + 1)),
                                        cfg.dropout_rate));
    return tape.add(x1, f);
}

inline Tensor causal_mask(int t) {
    Tensor m(t, t);
    for (int i = 0; i < t; ++i)
        for (int j = i + 1; j < t; ++j) m.at(i, j) = kAttnMask;
    return m;
}

}  // namespace detail

// --- embedding lookup ------------------------------------------------------

struct EmbedResult {
    ValueRef item_rows;                            // n x d
    std::vector<ValueRef> attr_sets;               // per item: m_max x d (invalid ref when m_max == 0)
    std::vector<std::vector<uint8_t>> attr_valid;  // n rows of m_max flags
    int m_max = 0;
};

// Look up item rows and per-item attribute sets, padded to the widest set
// with id 0 and a validity mask. Out-of-range ids are rejected by name.
inline EmbedResult embed(Tape& tape, const BoundParams& bound,
                         const std::vector<int>& item_ids,
                         const std::vector<std::vector<int>>& attr_ids) {
    const ModelParams& p = *bound.params;
    if (item_ids.empty()) throw std::invalid_argument("embed: empty item list");
    if (attr_ids.size() != item_ids.size())
        throw std::invalid_argument("embed: attribute list count does not match item count");
    for (int id : item_ids)
        if (id < 0 || id > p.num_items)
            throw std::invalid_argument("embed: item id " + std::to_string(id) + " out of range");
    for (const auto& set : attr_ids)
        for (int a : set)
            if (a <= 0 || a > p.num_attrs)
                throw std::invalid_argument("embed: attribute id " + std::to_string(a) + " out of range");

    EmbedResult res;
    res.item_rows = tape.gather_rows(bound.emb_items, item_ids, /*grad_skip_row0=*/true);
    for (const auto& set : attr_ids) res.m_max = std::max(res.m_max, static_cast<int>(set.size()));
    for (const auto& set : attr_ids) {
        std::vector<uint8_t> valid(static_cast<size_t>(res.m_max), 0);
        for (size_t i = 0; i < set.size(); ++i) valid[i] = 1;
        res.attr_valid.push_back(std::move(valid));
        if (res.m_max > 0) {
            std::vector<int> padded(set);
            padded.resize(static_cast<size_t>(res.m_max), 0);
            res.attr_sets.push_back(tape.gather_rows(bound.emb_attrs, padded, /*grad_skip_row0=*/true));
        } else {
            res.attr_sets.push_back(ValueRef{});
        }
    }
    return res;
}

// --- attribute encoder g_enc ------------------------------------------------

// Fuse one item embedding with its attribute set. The token set
// {x, a_1..a_m} goes through the encoder blocks without positional encoding
// (attribute sets are unordered); the output is the item-token row. Invalid
// attribute slots are masked out of attention. Dropout runs iff mask_seed
// is given.
inline ValueRef encode_item(Tape& tape, const BoundParams& bound, const ModelConfig& cfg,
                            ValueRef x, ValueRef attrs, const std::vector<uint8_t>& attr_valid,
                            std::optional<uint64_t> mask_seed) {
    if (tape.val(x).rows != 1) throw std::invalid_argument("encode_item: x must be a single row");
    int m = attrs.valid() ? tape.val(attrs).rows : 0;
    if (attrs.valid() && static_cast<int>(attr_valid.size()) != m)
        throw std::invalid_argument("encode_item: validity mask size does not match attribute count");

    ValueRef tokens = m > 0 ? tape.concat_rows({x, attrs}) : x;
    int n = 1 + m;

    Tensor mask(std::max(n, 1), std::max(n, 1));
    bool any_masked = false;
    for (int j = 0; j < m; ++j) {
        if (!attr_valid[static_cast<size_t>(j)]) {
            any_masked = true;
            for (int i = 0; i < n; ++i) mask.at(i, 1 + j) = kAttnMask;
        }
    }

    ValueRef h = tokens;
    for (size_t l = 0; l < bound.enc_blocks.size(); ++l)
        h = detail::transformer_block(tape, bound.enc_blocks[l], cfg, h,
                                      any_masked ? &mask : nullptr, mask_seed,
                                      /*site_base=*/static_cast<int>(2 * l));
    return n == 1 ? h : tape.slice_rows(h, 0, 1);
}

// Encode an item given ids; convenience wrapper used by training/eval.
inline ValueRef encode_item_id(Tape& tape, const BoundParams& bound, const ModelConfig& cfg,
                               int item_id, const std::vector<int>& attrs,
                               std::optional<uint64_t> mask_seed) {
    EmbedResult e = embed(tape, bound, {item_id}, {attrs});
    std::vector<uint8_t> valid(attrs.size(), 1);
    ValueRef attr_rows{};
    if (!attrs.empty()) attr_rows = e.attr_sets[0];
    return encode_item(tape, bound, cfg, e.item_rows, attr_rows, valid, mask_seed);
}

// --- temporal aggregation g_ta ----------------------------------------------

// Causally masked transformer over the item encodings with the learned
// positional table added to its input. Row t of the result is the context
// c_t of the prefix z_1..z_t; causality comes from the attention mask.
// Dropout (iff mask_seed): once on the block input, then inside each block.
inline ValueRef aggregate_context(Tape& tape, const BoundParams& bound, const ModelConfig& cfg,
                                  ValueRef z_seq, std::optional<uint64_t> mask_seed) {
    const int t = tape.val(z_seq).rows;
    if (t < 1) throw std::invalid_argument("aggregate_context: empty sequence");
    if (t > cfg.max_len)
        throw std::invalid_argument("aggregate_context: sequence length " + std::to_string(t) +
                                    " exceeds max_len " + std::to_string(cfg.max_len));

    ValueRef pos = tape.slice_rows(bound.pos_table, 0, t);
    ValueRef h = tape.add(z_seq, pos);
    if (mask_seed)
        h = tape.dropout(h, DropoutMask(derive_seed(*mask_seed, 0x7a00), cfg.dropout_rate));

    Tensor mask = detail::causal_mask(t);
    for (size_t l = 0; l < bound.ta_blocks.size(); ++l)
        h = detail::transformer_block(tape, bound.ta_blocks[l], cfg, h, &mask, mask_seed,
                                      /*site_base=*/static_cast<int>(0x7b00 + 2 * l));
    return h;
}

// --- memory module g_m --------------------------------------------------

// Soft addressing over the memory bank: w = softmax(MLP(c)), read = w * M.
// Res-M adds the original context back; FC-M returns the bare read.
inline ValueRef memory_read(Tape& tape, const BoundParams& bound, const ModelConfig& cfg, ValueRef c) {
    if (cfg.memory_variant == MemoryVariant::None)
        throw std::logic_error("memory_read: memory variant is 'none'");
    ValueRef hidden = tape.relu(detail::linear(tape, c, bound.mem_w1, bound.mem_b1));
    ValueRef logits = detail::linear(tape, hidden, bound.mem_w2, bound.mem_b2);
    ValueRef w = tape.softmax_rows(logits);
    ValueRef read = tape.matmul(w, bound.memory);
    return cfg.memory_variant == MemoryVariant::ResM ? tape.add(read, c) : read;
}

// Addressing weights alone (diagnostics/tests).
inline ValueRef memory_weights(Tape& tape, const BoundParams& bound, ValueRef c) {
    ValueRef hidden = tape.relu(detail::linear(tape, c, bound.mem_w1, bound.mem_b1));
    return tape.softmax_rows(detail::linear(tape, hidden, bound.mem_w2, bound.mem_b2));
}

// --- auto-regressive rollout g_ap ----------------------------------------

inline ValueRef gru_cell(Tape& tape, const BoundParams& bound, ValueRef input, ValueRef state) {
    ValueRef zg = tape.sigmoid(tape.add_rowvec(
        tape.add(tape.matmul(input, bound.gru_wz), tape.matmul(state, bound.gru_uz)), bound.gru_bz));
    ValueRef rg = tape.sigmoid(tape.add_rowvec(
        tape.add(tape.matmul(input, bound.gru_wr), tape.matmul(state, bound.gru_ur)), bound.gru_br));
    ValueRef cand = tape.tanh(tape.add_rowvec(
        tape.add(tape.matmul(input, bound.gru_wh), tape.matmul(tape.mul(rg, state), bound.gru_uh)),
        bound.gru_bh));
    // h' = (1-z) * h + z * cand
    ValueRef keep = tape.mul(tape.affine(zg, -1.0, 1.0), state);
    return tape.add(keep, tape.mul(zg, cand));
}

// Multi-step prediction: z_{t+1} = g_m(c_t), then the GRU advances the
// context one step per prediction. With memory 'none', g_m is the identity.
inline std::vector<ValueRef> rollout(Tape& tape, const BoundParams& bound, const ModelConfig& cfg,
                                     ValueRef c_t, int k) {
    if (k < 1) throw std::invalid_argument("rollout: steps must be >= 1");
    auto g_m = [&](ValueRef c) {
        return cfg.memory_variant == MemoryVariant::None ? c : memory_read(tape, bound, cfg, c);
    };
    std::vector<ValueRef> preds;
    preds.reserve(static_cast<size_t>(k));
    ValueRef state = c_t;
    ValueRef z = g_m(c_t);
    preds.push_back(z);
    for (int j = 1; j < k; ++j) {
        state = gru_cell(tape, bound, z, state);
        z = g_m(state);
        preds.push_back(z);
    }
    return preds;
}

// --- catalog scoring ---------------------------------------------------

// Dot-product scores of a query against every catalog row. Index 0 (the
// padding id) scores -inf so it can never be recommended. Items already in
// the user's history are not filtered.
inline std::vector<double> score_catalog(const std::vector<double>& query, const Tensor& catalog_z) {
    if (static_cast<int>(query.size()) != catalog_z.cols)
        throw std::invalid_argument("score_catalog: query width " + std::to_string(query.size()) +
                                    " does not match catalog " + catalog_z.shape_str());
    std::vector<double> scores(static_cast<size_t>(catalog_z.rows));
    scores[0] = -std::numeric_limits<double>::infinity();
    for (int i = 1; i < catalog_z.rows; ++i) {
        double s = 0.0;
        const double* row = &catalog_z.data[static_cast<size_t>(i) * catalog_z.cols];
        for (int j = 0; j < catalog_z.cols; ++j) s += query[static_cast<size_t>(j)] * row[j];
        scores[static_cast<size_t>(i)] = s;
    }
    return scores;
}

}  // namespace mminforec
