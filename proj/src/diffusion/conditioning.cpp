#include "diffender/conditioning.hpp"

#include "diffender/errors.hpp"

#include <algorithm>

namespace diffender {

Conditioning Conditioning::empty(int cond_dim) {
    Conditioning c;
    c.vectors = RowMatrix::Zero(1, cond_dim);
    c.is_empty = true;
    return c;
}

Conditioning Conditioning::from_vectors(RowMatrix v) {
    if (v.rows() < 1) throw ParamError("conditioning needs at least one vector");
    if (!v.allFinite()) throw RangeError("conditioning vectors must be finite");
    Conditioning c;
    c.vectors = std::move(v);
    return c;
}

Vector Conditioning::pooled() const { return vectors.colwise().sum().transpose(); }

Vocabulary::Vocabulary(std::vector<std::string> tokens, int dim, std::uint64_t seed) : tokens_(std::move(tokens)) {
    RngStream rng(seed, 0x70c4b);
    table_.resize(static_cast<Eigen::Index>(tokens_.size()), dim);
    for (Eigen::Index i = 0; i < table_.size(); ++i) table_.data()[i] = 0.5 * rng.normal();
}

Vocabulary::Vocabulary(std::vector<std::string> tokens, RowMatrix table)
    : tokens_(std::move(tokens)), table_(std::move(table)) {
    if (static_cast<Eigen::Index>(tokens_.size()) != table_.rows()) throw ShapeError("vocabulary table size mismatch");
}

bool Vocabulary::contains(const std::string& token) const {
    return std::find(tokens_.begin(), tokens_.end(), token) != tokens_.end();
}

Vector Vocabulary::embed(const std::string& token) const {
    auto it = std::find(tokens_.begin(), tokens_.end(), token);
    if (it == tokens_.end()) throw ParamError("unknown token '" + token + "'");
    return table_.row(it - tokens_.begin()).transpose();
}

Conditioning Vocabulary::encode(const std::vector<std::string>& words) const {
    if (words.empty()) return Conditioning::empty(dim());
    RowMatrix v(static_cast<Eigen::Index>(words.size()), dim());
    for (std::size_t i = 0; i < words.size(); ++i) v.row(static_cast<Eigen::Index>(i)) = embed(words[i]).transpose();
    return Conditioning::from_vectors(std::move(v));
}

}  // namespace diffender
