#pragma once

#include "diffender/classifier.hpp"
#include "diffender/defense.hpp"
#include "diffender/image.hpp"
#include "diffender/rng.hpp"

#include <vector>

namespace diffender {

/// Square patch placed at (row, col) of an image_h × image_w image.
struct PatchSpec {
    int row = 0;
    int col = 0;
    int side = 0;
    int image_h = 0;
    int image_w = 0;
    Image content;  // side × side × C

    double area_frac() const;
    BinaryMask mask() const;
    /// Throws BoundsError for a non-positive side or a square leaving the image,
    /// ShapeError for content of the wrong size.
    void validate() const;
};

/// Side of the square covering `area_frac` of an H×W image (at least 1).
int patch_side_for(double area_frac, int height, int width);

/// Replaces the square by spec.content; every other pixel is untouched.
Image apply_patch(const Image& x, const PatchSpec& spec);

enum class PatchInit { Random, Gray };

struct AttackOptions {
    double area_frac = 0.05;
    int iters = 100;
    double step = 2.0 / 255.0;
    PatchInit init = PatchInit::Random;
};

struct AttackResult {
    PatchSpec spec;
    Image image;
    /// Best cross-entropy after each iteration (index 0 = initial patch).
    std::vector<double> best_loss;
};

/// Untargeted patch attack: uniformly random position, random (or gray)
/// initial content, then `iters` signed-gradient ascent steps on the cross-entropy
/// with the content clamped to [0,1]. Returns the best iterate.
AttackResult patch_attack(const Image& x, int label, const ClassifierModel& clf, const AttackOptions& opts,
                          RngStream& rng);

/// Same attack against classifier ∘ defense. The forward pass runs the full
/// defense; gradients come from Defense::backward (BPDA with straight-through
/// masks). Defense randomness uses per-iteration substreams of `rng`.
AttackResult bpda_adaptive_attack(const Image& x, int label, const ClassifierModel& clf, const Defense& defense,
                                  const AttackOptions& opts, RngStream& rng);

}  // namespace diffender
