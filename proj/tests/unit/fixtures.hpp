// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "xfcsi/flow_train.hpp"

namespace testutil {

// A few users with small sensing tensors; fast enough for unit tests.
inline xfcsi::DatasetConfig tiny_dataset_config(std::size_t users = 12, std::uint64_t seed = 5) {
    xfcsi::DatasetConfig c;
    c.scene.users = users;
    c.scene.image_size = 16;
    c.scene.points = 32;
    c.seed = seed;
    return c;
}

inline xfcsi::ModelConfig tiny_model_config(const xfcsi::DatasetConfig& d) {
    xfcsi::ModelConfig m;
    m.encoder.n_ue = m.unet.n_ue = static_cast<std::size_t>(d.n_ue);
    m.encoder.n_bs = m.unet.n_bs = static_cast<std::size_t>(d.n_bs);
    m.encoder.image_size = d.scene.image_size;
    m.encoder.points = d.scene.points;
    m.encoder.cnn_base = 4;
    m.encoder.point_widths = {8, 8, 16};
    m.encoder.embed_dim = 16;
    m.encoder.feature_dim = 16;
    m.encoder.heads = 2;
    m.unet.base_channels = 8;
    m.unet.time_dim = 16;
    return m;
}

inline xfcsi::TrainConfig tiny_train_config(const xfcsi::DatasetConfig& d, std::size_t epochs = 3) {
    xfcsi::TrainConfig t;
    t.epochs = epochs;
    t.batch_size = 8;
    t.lr = 1e-3;
    t.eval_every = 1;
    t.eval_K = 3;
    t.test_fraction = 0.25;
    t.model = tiny_model_config(d);
    return t;
}

}  // namespace testutil
