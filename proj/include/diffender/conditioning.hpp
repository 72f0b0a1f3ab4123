#pragma once

#include "diffender/rng.hpp"
#include "diffender/tensor.hpp"

#include <string>
#include <vector>

namespace diffender {

/// Text guidance handed to the denoiser: n×d_cond context vectors, or the
/// unconditional branch when is_empty is set.
struct Conditioning {
    RowMatrix vectors;
    bool is_empty = false;

    static Conditioning empty(int cond_dim);
    static Conditioning from_vectors(RowMatrix v);

    int dim() const { return static_cast<int>(vectors.cols()); }
    int rows() const { return static_cast<int>(vectors.rows()); }
    /// Sum over context rows; the toy denoiser's text pooling.
    Vector pooled() const;
};

/// Frozen token-embedding table of the toy text encoder.
class Vocabulary {
public:
    Vocabulary() = default;
    Vocabulary(std::vector<std::string> tokens, int dim, std::uint64_t seed);
    Vocabulary(std::vector<std::string> tokens, RowMatrix table);

    int dim() const { return static_cast<int>(table_.cols()); }
    const std::vector<std::string>& tokens() const { return tokens_; }
    const RowMatrix& table() const { return table_; }
    bool contains(const std::string& token) const;
    /// Throws ParamError for unknown tokens.
    Vector embed(const std::string& token) const;
    /// One row per token; an empty token list yields Conditioning::empty.
    Conditioning encode(const std::vector<std::string>& words) const;

private:
    std::vector<std::string> tokens_;
    RowMatrix table_;
};

}  // namespace diffender
