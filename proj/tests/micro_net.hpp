#pragma once

// A small 2-block network assembled from public layer structs, with every
// parameter supplied as an external leaf tensor. Used by the gradient tests
// to check the composed backward end to end.

#include <vector>

#include "daft/nn.hpp"

namespace micro {

/// Leaf order: image, stem.w, stem_bn.g, stem_bn.b, then per block
/// (conv1.w, conv2.w, bn1.g, bn1.b, bn2.g, bn2.b, sc.w, sc_bn.g, sc_bn.b),
/// then head.w, head.b.
inline std::vector<daft::TensorD> make_inputs(std::uint64_t seed) {
    daft::Rng rng(seed);
    std::vector<daft::TensorD> in;
    auto randn = [&rng](daft::Shape shape, double stddev) {
        return daft::TensorD::randn(std::move(shape), rng, stddev);
    };
    auto affine = [&](std::int64_t c) {
        in.push_back(randn({c}, 0.2));  // gamma near 0 is fine for a gradient probe
        in.push_back(randn({c}, 0.2));
    };
    in.push_back(randn({1, 1, 4, 4, 4}, 1.0));  // image
    in.push_back(randn({2, 1, 3, 3, 3}, 0.4));  // stem
    affine(2);
    // block 1: 2 -> 3, stride 2 (projection shortcut)
    in.push_back(randn({3, 2, 3, 3, 3}, 0.3));
    in.push_back(randn({3, 3, 3, 3, 3}, 0.3));
    affine(3);
    affine(3);
    in.push_back(randn({3, 2, 1, 1, 1}, 0.5));
    affine(3);
    // block 2: 3 -> 4, stride 1 (projection shortcut)
    in.push_back(randn({4, 3, 3, 3, 3}, 0.3));
    in.push_back(randn({4, 4, 3, 3, 3}, 0.3));
    affine(4);
    affine(4);
    in.push_back(randn({4, 3, 1, 1, 1}, 0.5));
    affine(4);
    // head: 4 -> 3
    in.push_back(randn({3, 4}, 0.5));
    in.push_back(randn({3}, 0.2));
    return in;
}

inline daft::TensorD forward(const std::vector<daft::TensorD>& in, bool training = true) {
    std::size_t i = 0;
    const auto& image = in[i++];

    daft::Conv3dLayer<double> stem(1, 2, 3, 1, 1);
    stem.weight = in[i++];
    daft::BatchNorm3d<double> stem_bn(2);
    stem_bn.training_mode = training;
    stem_bn.gamma = in[i++];
    stem_bn.beta = in[i++];

    auto make_block = [&](std::int64_t c_in, std::int64_t c_out, std::int64_t stride) {
        daft::ResBlock<double> block(c_in, c_out, stride);
        block.conv1.weight = in[i++];
        block.conv2.weight = in[i++];
        block.bn1.gamma = in[i++];
        block.bn1.beta = in[i++];
        block.bn2.gamma = in[i++];
        block.bn2.beta = in[i++];
        block.shortcut_conv.weight = in[i++];
        block.shortcut_bn.gamma = in[i++];
        block.shortcut_bn.beta = in[i++];
        block.set_training(training);
        return block;
    };
    auto block1 = make_block(2, 3, 2);
    auto block2 = make_block(3, 4, 1);

    daft::LinearLayer<double> head(4, 3, true);
    head.weight = in[i++];
    head.bias = in[i++];

    auto h = daft::relu(stem_bn.forward(stem.forward(image)));
    h = block1.forward(h);
    h = block2.forward(h);
    return head.forward(daft::global_avg_pool3d(h));
}

}  // namespace micro
