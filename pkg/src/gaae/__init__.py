"""Guided adversarial autoencoder for conditional audio spectrogram synthesis.

Subpackages:
    grad      tensor library with reverse-mode autodiff and Adam
    dsp       STFT / log-magnitude normalization / PGHI / Griffin-Lim
    nets      the five networks (encoder, decoder, classifier, two critics)
    losses    the combined objective and both discriminator hinge losses
    training  the k-step minibatch training loop
    metrics   inception score, Frechet distance, GAN-train protocol
    cli       preprocess / split / train / generate / evaluate / export
"""

__version__ = "0.1.0"
