#pragma once

#include "diffender/config.hpp"
#include "diffender/image.hpp"

namespace diffender {

/// Convolution with a normalized Gaussian of radius ceil(3σ), separable,
/// half-sample symmetric borders. σ = 0 is the identity. Throws ParamError for σ < 0.
SoftMask gaussian_smooth(const SoftMask& mask, double sigma);

/// Normalized 1-D kernel of length 2·ceil(3σ)+1.
std::vector<double> gaussian_kernel(double sigma);

/// Morphological dilation by the disk {dx² + dy² ≤ r²}. r = 0 is the identity.
BinaryMask dilate(const BinaryMask& mask, int radius);

/// Drops 8-connected components with fewer than min_area pixels.
BinaryMask remove_small_components(const BinaryMask& mask, int min_area);

/// Every refinement stage, kept for inspection.
struct RefineResult {
    BinaryMask initial;   // binarize(raw, tau_bin)
    SoftMask smoothed;
    BinaryMask rebinarized;
    BinaryMask despeckled;
    BinaryMask mask;      // final, after dilation
    bool no_patch = false;
};

/// binarize → smooth(σ) → binarize(tau_smooth) → despeckle(min_area) → dilate(r).
/// An empty result sets no_patch.
RefineResult refine(const SoftMask& raw, const DefenseConfig& cfg);

}  // namespace diffender
