scene_config = {
    "n_cameras": 12,
    "ring_radius": 3.0,
    "ring_height": 1.3,
    "ring_start_angle": 0.0,
    "look_at": [0.0, 1.15, 0.0],
    "fov_degrees": 40.0,
    "width": 96,
    "height": 96,
    "n_frames": 3,
    "template": "box",
    "template_size": [0.3, 0.2, 0.2],
    "template_subdivisions": 2,
    "n_markers": 6,
    "marker_noise": 0.0,
    "light_direction": [0.3, 0.8, 0.5],
    "ambient": 0.3,
    "motion_amplitude": 1.0,
    "body_motion": None,
    "object_motion": None,
    "seed": 0,
}

tracking_config = {
    "lambda_contact": 1.0,
    "lambda_homask": 0.1,
    "lambda_marker": 10.0,
    "contact_threshold": 0.02,
    "max_iters": 100,
    "tol": 1e-12,
    "min_step": 1e-14,
    "contact_refresh": 10,
    "homask_resolution": 64,
    "splat_sigma": 1.0,
    "body_samples_around": 8,
    "body_samples_along": 4,
    "object_samples_per_face": 1,
    "fit_max_iters": 2000,
    "icp_max_iters": 50,
    "icp_tol": 1e-12,
    "pixel_noise": 0.0,
}

network_config_human = {
    "pos_freqs": 6,
    "dir_freqs": 4,
    "density_layer_sizes": [64, 64, 64, 64],
    "density_activations": ["relu", "relu", "relu", "relu"],
    "color_layer_sizes": [32, 32, 3],
    "color_activations": ["relu", "relu", "sigmoid"],
    "deform_layer_sizes": [64, 64, 3],
    "deform_activations": ["relu", "relu", "linear"],
    "latent_dim": 8,
    "max_deformation": 0.1,
    "bounds_margin": 0.1,
}

network_config_object = {
    "pos_freqs": 6,
    "dir_freqs": 4,
    "density_layer_sizes": [64, 64, 64, 64],
    "density_activations": ["relu", "relu", "relu", "relu"],
    "color_layer_sizes": [32, 32, 3],
    "color_activations": ["relu", "relu", "sigmoid"],
    "latent_dim": 8,
    "bounds_scale": 1.2,
}

render_config = {
    "human_bins": 32,
    "object_bins": 8,
    "object_window": 0.02,
    "far_delta": 0.01,
    "human_margin": 0.05,
    "chunk": 4096,
}

loss_config = {
    "w_c": 1.0,
    "w_o": 0.1,
    "w_h": 0.1,
    "w_s": 0.05,
    "tau_s": 0.05,
    "n_object_samples": 1024,
    "n_human_samples": 1024,
    "pseudo_seg_fraction": 0.6,
}

train_config_layered = {
    "learning_rate": 5e-4,
    # halves the learning rate every 2000 steps
    "lr_decay": 0.5 ** (1.0 / 2000.0),
    "n_steps": 20000,
    "batch_size": 1024,
    "beta1": 0.9,
    "beta2": 0.999,
    "eps": 1e-8,
    "seed": 0,
    "holdout_views": [0],
    "checkpoint_every": 2000,
    "log_every": 100,
    "divergence_factor": 10.0,
    "divergence_patience": 100,
}

export_config = {
    "mesh_resolution": 64,
    "iso_level": 10.0,
    "png_copies": False,
}

pipeline_config = {
    "scene": scene_config,
    "tracking": tracking_config,
    "network_human": network_config_human,
    "network_object": network_config_object,
    "render": render_config,
    "loss": loss_config,
    "train": train_config_layered,
    "export": export_config,
    "ablation": {
        "use_contact": True,
        "use_homask": True,
        "use_pseudo_segmentation": True,
        "use_blending": True,
    },
    "output_dir": "out",
    "workers": 1,
    "seed": 0,
}
