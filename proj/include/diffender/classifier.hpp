#pragma once

#include "diffender/checkpoint.hpp"
#include "diffender/image.hpp"
#include "diffender/nn.hpp"
#include "diffender/toy_data.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace diffender {

/// Forward record of a classifier pass; exposes the registered feature layers.
class ClassifierTape {
public:
    virtual ~ClassifierTape() = default;
    std::map<std::string, Tensor> features;
};

/// Downstream classifier under attack. Differentiable w.r.t. its input.
class ClassifierModel {
public:
    virtual ~ClassifierModel() = default;

    virtual int num_classes() const = 0;
    virtual std::vector<std::string> feature_layers() const = 0;

    virtual Vector logits(const Image& x, std::unique_ptr<ClassifierTape>* tape = nullptr) const = 0;

    /// Backpropagates dL/dlogits plus optional gradients injected at named
    /// feature layers; returns dL/dx in pixel space.
    virtual Tensor backward(const ClassifierTape& tape, const Vector& g_logits,
                            const std::map<std::string, Tensor>& g_features, nn::GradMap* grads) const = 0;

    int predict(const Image& x) const;
};

/// Softmax cross-entropy and its gradient w.r.t. the logits.
double cross_entropy(const Vector& logits, int label, Vector* grad = nullptr);

/// Three ReLU conv blocks (32², 16², 8²) with 2× average pooling between
/// them, global average pooling and a linear head. Feature layers:
/// "block1", "block2", "block3".
class ToyClassifier final : public ClassifierModel {
public:
    ToyClassifier(int channels, int num_classes, std::uint64_t seed, std::vector<int> widths = {16, 32, 64});

    int num_classes() const override { return classes_; }
    std::vector<std::string> feature_layers() const override { return {"block1", "block2", "block3"}; }
    Vector logits(const Image& x, std::unique_ptr<ClassifierTape>* tape = nullptr) const override;
    Tensor backward(const ClassifierTape& tape, const Vector& g_logits, const std::map<std::string, Tensor>& g_features,
                    nn::GradMap* grads) const override;

    std::vector<nn::Param*> params();
    std::vector<const nn::Param*> params() const;
    int channels() const { return channels_; }

    void save(const std::filesystem::path& path, const nlohmann::json& extra = {}) const;
    static ToyClassifier load(const std::filesystem::path& path);

private:
    struct Tape;

    int channels_;
    int classes_;
    std::vector<int> widths_;
    nn::Conv2d c1_, c2_, c3_;
    nn::Linear head_;
};

struct ClassifierTrainConfig {
    int epochs = 20;
    int batch = 8;
    double lr = 3e-3;
    double lr_final = 1e-4;
    std::uint64_t seed = 0;
};

/// Throws DataError on empty data, label/count mismatch, or mixed shapes.
ToyClassifier train_toy_classifier(const ToyDataset& data, const ClassifierTrainConfig& cfg,
                                   std::vector<double>* epoch_loss = nullptr);

/// Fraction in [0,1] of images whose prediction equals the label.
double accuracy(const ClassifierModel& clf, const std::vector<Image>& images, const std::vector<int>& labels);

}  // namespace diffender
