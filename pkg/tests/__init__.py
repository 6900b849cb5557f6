"""Test suite for SmartClip AI."""
